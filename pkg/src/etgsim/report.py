"""Metrics, steady-state checks and CSV outputs of simulation runs."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .pubsub import messages_energy_wh
from .scenario import ErrorSeries, SimResult

SERIES_FILES = ("voltages", "energies", "powers", "events")


@dataclass(frozen=True)
class Table:
    header: tuple[str, ...]
    rows: tuple[tuple, ...]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.header)
        for row in self.rows:
            w.writerow([_fmt(x) for x in row])
        return buf.getvalue()

    def format(self) -> str:
        cells = [list(self.header)] + [[_fmt(x) for x in row] for row in self.rows]
        widths = [max(len(r[c]) for r in cells) for c in range(len(self.header))]
        lines = ["  ".join(v.rjust(w) for v, w in zip(r, widths)) for r in cells]
        lines.insert(1, "  ".join("-" * w for w in widths))
        return "\n".join(lines)

    def write(self, path: str | Path) -> Path:
        path = Path(path)
        try:
            path.write_text(self.to_csv())
        except OSError as exc:
            raise OSError(f"cannot write {path}: {exc.strerror or exc}") from exc
        return path


def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return str(bool(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return f"{float(x):.6f}"
    return str(x)


@dataclass(frozen=True)
class PhaseSummary:
    index: int
    start_s: float
    end_s: float
    rectifier_mode: str
    mean_voltage: float
    min_voltage: float
    max_voltage: float
    settled_voltage_error: float
    final_mean_energy: float
    max_energy_spread: float
    final_energy_spread: float
    publishes: int

    def __post_init__(self) -> None:
        if not self.min_voltage <= self.mean_voltage <= self.max_voltage:
            raise ValueError("phase summary violates min <= mean <= max")


def phase_bounds(result: SimResult) -> list[tuple[float, float]]:
    cfg = result.config
    starts = [p.start_min * 60.0 for p in cfg.phases]
    ends = starts[1:] + [cfg.duration]
    return [(s, min(e, cfg.duration)) for s, e in zip(starts, ends) if s < cfg.duration]


def _rows(result: SimResult, start: float, end: float, inclusive_end: bool = False) -> np.ndarray:
    t = result.times
    eps = 1e-9
    mask = (t >= start - eps) & ((t <= end + eps) if inclusive_end else (t < end - eps))
    return np.flatnonzero(mask)


def phase_summaries(result: SimResult, settle: float = 60.0) -> list[PhaseSummary]:
    """One summary per configured phase.

    ``settled_voltage_error`` is ``|mean(mean bus voltage) - v_mg|`` over the
    phase after its first ``settle`` seconds.
    """
    v_mg = result.config.gains[0].v_mg
    out = []
    for idx, (start, end) in enumerate(phase_bounds(result)):
        rows = _rows(result, start, end)
        if rows.size == 0:
            continue
        v = result.voltages[rows]
        e = result.energies[rows]
        settled = _rows(result, start + settle, end)
        settled_err = float(abs(result.voltages[settled].mean() - v_mg)) if settled.size else float("nan")
        before = result.events[rows[0] - 1].sum() if rows[0] > 0 else 0
        mv = v.mean(axis=1)
        out.append(
            PhaseSummary(
                index=idx,
                start_s=start,
                end_s=end,
                rectifier_mode=result.config.phases[idx].rectifier_mode,
                mean_voltage=float(mv.mean()),
                min_voltage=float(v.min()),
                max_voltage=float(v.max()),
                settled_voltage_error=settled_err,
                final_mean_energy=float(e[-1].mean()),
                max_energy_spread=float(np.ptp(e, axis=1).max()),
                final_energy_spread=float(np.ptp(e[-1])),
                publishes=int(result.events[rows[-1]].sum() - before),
            )
        )
    return out


def steady_state_check(result: SimResult, window: tuple[float, float]) -> dict[str, float]:
    """Average-voltage error and final energy spread over ``window = (start_s, end_s)``.

    Raises
    ------
    ValueError
        If the window is empty, leaves the run, or spans a phase boundary.
    """
    start, end = map(float, window)
    if not end > start:
        raise ValueError("window end must be after its start")
    if start < 0 or end > result.config.duration + 1e-9:
        raise ValueError("window lies outside the run")
    for s, _ in phase_bounds(result)[1:]:
        if start < s < end:
            raise ValueError(f"window ({start:g}, {end:g}) s spans the phase boundary at {s:g} s")
    rows = _rows(result, start, end, inclusive_end=True)
    if rows.size == 0:
        raise ValueError("window contains no samples")
    v_mg = result.config.gains[0].v_mg
    return {
        "avg_voltage_error": float(abs(result.voltages[rows].mean(axis=1).mean() - v_mg)),
        "energy_spread": float(np.ptp(result.energies[rows[-1]])),
    }


def event_report(result: SimResult) -> Table:
    rows = [(f"bus{i + 1}", int(c)) for i, c in enumerate(result.publish_counts)]
    rows.append(("total", int(result.publish_counts.sum())))
    return Table(("bus", "events"), tuple(rows))


def energy_report(event: SimResult, baseline: SimResult) -> Table:
    """Messages and radio energy of both runs, with the event run's reduction."""
    model = event.config.energy_model
    m_b = baseline.total_published
    m_e = event.total_published
    wh_b = messages_energy_wh(m_b, model)
    wh_e = messages_energy_wh(m_e, model)
    reduction = 0.0 if wh_b == 0 else 100.0 * (1.0 - wh_e / wh_b)
    return Table(
        ("run", "mode", "messages", "energy_wh", "reduction_pct"),
        (
            ("baseline", baseline.config.mode, m_b, wh_b, 0.0),
            ("event", event.config.mode, m_e, wh_e, reduction),
        ),
    )


def reduction_percent(event: SimResult, baseline: SimResult) -> float:
    return float(energy_report(event, baseline).rows[1][4])


def _series_header(n: int) -> list[str]:
    return ["time_s"] + [f"bus{i + 1}" for i in range(n)]


def _write_matrix(path: Path, times: np.ndarray, data: np.ndarray, integer: bool = False) -> Path:
    header = ",".join(_series_header(data.shape[1]))
    fmt = ["%.6f"] + (["%d"] * data.shape[1] if integer else ["%.6f"] * data.shape[1])
    try:
        np.savetxt(path, np.column_stack([times, data]), fmt=fmt, delimiter=",", header=header, comments="")
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc.strerror or exc}") from exc
    return path


def write_series(result: SimResult, directory: str | Path) -> dict[str, Path]:
    """Write voltages/energies/powers/events CSVs; return name -> path.

    Values use fixed six-decimal formatting; event counts are cumulative
    integers.
    """
    d = Path(directory)
    try:
        d.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create {d}: {exc.strerror or exc}") from exc
    return {
        "voltages": _write_matrix(d / "voltages.csv", result.times, result.voltages),
        "energies": _write_matrix(d / "energies.csv", result.times, result.energies),
        "powers": _write_matrix(d / "powers.csv", result.times, result.powers),
        "events": _write_matrix(d / "events.csv", result.times, result.events, integer=True),
    }


def write_error_series(errors: ErrorSeries, directory: str | Path) -> dict[str, Path]:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    return {
        "voltage_error": _write_matrix(d / "voltage_error.csv", errors.times, errors.voltage),
        "energy_error": _write_matrix(d / "energy_error.csv", errors.times, errors.energy),
    }


def read_series(path: str | Path) -> tuple[np.ndarray, np.ndarray]:
    """Read one series CSV back as ``(times, values)``."""
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return data[:, 0], data[:, 1:]


def format_summary(result: SimResult, settle: float = 60.0) -> str:
    rows = []
    for p in phase_summaries(result, settle):
        rows.append(
            (
                p.index + 1,
                f"{p.start_s / 60:g}-{p.end_s / 60:g}",
                p.rectifier_mode,
                p.mean_voltage,
                p.min_voltage,
                p.max_voltage,
                p.settled_voltage_error,
                p.final_mean_energy,
                p.final_energy_spread,
                p.publishes,
            )
        )
    table = Table(
        ("phase", "minutes", "rectifier", "v_mean", "v_min", "v_max", "v_err", "e_final", "e_spread", "events"),
        tuple(rows),
    )
    lines = [
        table.format(),
        "",
        f"mode={result.config.mode} delay={result.config.delay:g}s seed={result.config.rng_seed}",
        f"transmissions={result.total_published} comms_energy={result.comms_energy_wh:.6f} Wh",
    ]
    if result.config.mode == "event":
        lines.append(f"sod_max_excess={result.sod_max_excess:.3e} held_mismatches={result.held_mismatches}")
    return "\n".join(lines)


def voltage_band_ok(result: SimResult, band: float = 0.05) -> bool:
    v_mg = result.config.gains[0].v_mg
    return bool(np.all(np.abs(result.voltages - v_mg) <= band * v_mg))


def summarize_pair(event: SimResult, baseline: SimResult, errors: ErrorSeries) -> str:
    rep = energy_report(event, baseline)
    lines = [
        rep.format(),
        "",
        f"max |voltage difference| = {errors.max_voltage_error:.6f} V",
        f"max |energy difference|  = {errors.max_energy_error:.6f} p.u.",
        f"voltages within +/-5%: event={voltage_band_ok(event)} baseline={voltage_band_ok(baseline)}",
    ]
    return "\n".join(lines)


__all__: Sequence[str] = (
    "PhaseSummary",
    "Table",
    "event_report",
    "energy_report",
    "format_summary",
    "phase_bounds",
    "phase_summaries",
    "read_series",
    "reduction_percent",
    "steady_state_check",
    "summarize_pair",
    "voltage_band_ok",
    "write_error_series",
    "write_series",
)
