"""Command-line interface: simulation, reconstruction, moments, invariants, PPT and derivations.

Every output file carries the full run configuration and a SHA-256 of its
data section.  CSV files put both in ``#`` comment lines, JSON files in the
``run_config`` and ``content_sha256`` keys, and binary files in a
``.meta.json`` sidecar.  Writes go to a temporary file in the output
directory and are then renamed into place.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import os
import sys
import tempfile
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import formulas as F
from .derive import DerivationError, check_against_builtin, derive, describe, emit_term_table
from .detection import ConvergenceError, DetectorModel, build_compound_realizations, reconstruct_em
from .distribution import JointDistribution, read_binary, read_csv, write_csv
from .entanglement import (
    FORMS,
    noise_sweep_report,
    ppt_from_moments,
    thresholds,
    verdict_sequence_is_monotone,
)
from .gauss_core import (
    PHYSICAL_TOL_ANALYTIC,
    GaussianStateParams,
    build_covariance,
    is_physical,
    purities,
    qui_from_covariance,
    symplectic_eigenvalues,
    symplectic_eigenvalues_from_quis,
)
from .model import (
    SweepConfig,
    TwbModelParams,
    build_state_distribution,
    gaussian_params_of_model,
    mean_correlated,
    sample_channels,
    write_sweep_csv,
)
from .moments import (
    IntensityMoments,
    PhotonMoments,
    intensity_from_photon_moments,
    intensity_moments_from_distribution,
    moments_from_distribution,
    moments_from_params,
    read_moments_csv,
    reduce_to_single_mode,
    write_moments_csv,
)

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_CONVERGENCE = 3
EXIT_IO = 4

DEFAULT_W_N = list(range(0, 60, 2))
DEFAULT_MODES = 6.7

DEFAULTS = {
    "simulate": {
        "model": {},
        "w_p": 2,
        "w_n_list": DEFAULT_W_N,
        "n_windows": 200_000,
        "stride": 1000,
        "overlapping": False,
        "noise_layout": "interleaved",
        "histograms": True,
        "channels_format": "csv",
    },
    "reconstruct": {
        "histogram": None,
        "n_pixels": None,
        "efficiency": None,
        "dark_total": 0.0,
        "w_p": None,
        "w_n": None,
        "model": {},
        "photon_max": None,
        "max_iters": 100_000,
        "tol": 1e-10,
        "step_tol": None,
        "init": "uniform",
    },
    "moments": {"distribution": None, "max_order": 6, "modes": None},
    "invariants": {
        "moments": None,
        "distribution": None,
        "params": None,
        "modes": None,
        "sweep": False,
        "model": {},
        "w_p": 2,
        "w_n_list": DEFAULT_W_N,
        "physical_tol": PHYSICAL_TOL_ANALYTIC,
    },
    "entangle": {
        "moments": None,
        "modes": None,
        "model": {},
        "w_p": 2,
        "w_n_list": DEFAULT_W_N,
        "tol": 1e-9,
        "form": "exact",
    },
    "derive": {"n_beams": 1, "k": 1, "n_points": 100},
    "report": {"model": {}, "w_p": 2, "w_n_list": DEFAULT_W_N, "modes": DEFAULT_MODES, "tol": 1e-9, "form": "exact"},
}
GLOBAL_KEYS = ("seed", "jobs", "strict", "out_dir")


class ValidationError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    command: str
    options: dict = field(default_factory=dict)
    seed: int = 0
    jobs: int = 1
    strict: bool = False
    out_dir: str = "out"

    def __post_init__(self):
        if self.command not in DEFAULTS:
            raise ValidationError(f"unknown command {self.command!r}")
        unknown = set(self.options) - set(DEFAULTS[self.command])
        if unknown:
            raise ValidationError(f"unknown options for {self.command}: {sorted(unknown)}")
        merged = {**DEFAULTS[self.command], **self.options}
        object.__setattr__(self, "options", merged)
        if self.jobs < 1:
            raise ValidationError("--jobs must be >= 1")
        if self.seed < 0:
            raise ValidationError("--seed must be non-negative")

    def __getitem__(self, key):
        return self.options[key]

    def to_json_dict(self) -> dict:
        return asdict(self)

    def dumps(self) -> str:
        return json.dumps(self.to_json_dict(), sort_keys=True, separators=(",", ":"))

    def model(self) -> TwbModelParams:
        try:
            return TwbModelParams.from_dict(self.options["model"])
        except (KeyError, TypeError, ValueError) as exc:
            raise ValidationError(f"invalid model parameters: {exc}") from exc

    def sweep(self) -> SweepConfig:
        try:
            return SweepConfig(int(self.options["w_p"]), tuple(self.options["w_n_list"]))
        except (TypeError, ValueError) as exc:
            raise ValidationError(str(exc)) from exc


def load_config(command: str, path: str | None, overrides: dict, globals_: dict) -> RunConfig:
    """Defaults, then the JSON config file, then explicit command-line flags."""
    options: dict = {}
    glob = {}
    if path:
        doc = json.loads(Path(path).read_text())
        if not isinstance(doc, dict):
            raise ValidationError("config file must hold a JSON object")
        for key in GLOBAL_KEYS:
            if key in doc:
                glob[key] = doc.pop(key)
        section = doc.pop(command, None)
        others = set(doc) & set(DEFAULTS)
        for name in others:
            doc.pop(name)
        options.update(doc)
        if section:
            options.update(section)
    model = {**options.get("model", {}), **overrides.pop("model", {})}
    options.update(overrides)
    if model:
        options["model"] = model
    glob.update(globals_)
    return RunConfig(command, options, **glob)


# output


def _sha(text: str | bytes) -> str:
    data = text.encode() if isinstance(text, str) else text
    return hashlib.sha256(data).hexdigest()


def _atomic_write(path: Path, data: bytes) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


class Output:
    """Writes files under ``cfg.out_dir`` with the provenance header."""

    def __init__(self, cfg: RunConfig):
        self.cfg = cfg
        self.root = Path(cfg.out_dir)
        self.written: list[str] = []

    def _stamp_csv(self, text: str) -> str:
        body = "".join(line for line in text.splitlines(keepends=True) if not line.startswith("#"))
        head = f"# run_config={self.cfg.dumps()}\n# content_sha256={_sha(body)}\n"
        return head + text

    def csv(self, name: str, render) -> Path:
        """``render(path)`` writes into a scratch file that is then stamped."""
        path = self.root / name
        path.parent.mkdir(parents=True, exist_ok=True)
        fd, scratch = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".render")
        os.close(fd)
        try:
            render(scratch)
            text = Path(scratch).read_text()
        finally:
            os.unlink(scratch)
        _atomic_write(path, self._stamp_csv(text).encode())
        self.written.append(name)
        return path

    def json(self, name: str, data) -> Path:
        body = json.dumps(data, sort_keys=True, indent=2, allow_nan=True)
        doc = {"run_config": self.cfg.to_json_dict(), "content_sha256": _sha(body), "data": data}
        path = self.root / name
        _atomic_write(path, (json.dumps(doc, sort_keys=True, indent=2, allow_nan=True) + "\n").encode())
        self.written.append(name)
        return path

    def binary(self, name: str, writer, obj) -> Path:
        path = self.root / name
        path.parent.mkdir(parents=True, exist_ok=True)
        fd, scratch = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".render")
        os.close(fd)
        try:
            writer(obj, scratch)
            data = Path(scratch).read_bytes()
        finally:
            os.unlink(scratch)
        _atomic_write(path, data)
        meta = {"run_config": self.cfg.to_json_dict(), "content_sha256": _sha(data), "file": name}
        _atomic_write(path.with_name(path.name + ".meta.json"), (json.dumps(meta, sort_keys=True, indent=2) + "\n").encode())
        self.written.append(name)
        return path


def _write_rows(path, header: list[str], rows) -> None:
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(_fmt(v) for v in row))
    Path(path).write_text("\n".join(lines) + "\n")


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return "" if v is None else str(v)


def _load_distribution(path: str) -> JointDistribution:
    if path is None:
        raise ValidationError("an input distribution file is required")
    try:
        if str(path).endswith(".csv"):
            return read_csv(path)
        return read_binary(path)
    except (ValueError, IndexError, StopIteration) as exc:
        raise ValidationError(f"malformed distribution file {path}: {exc}") from exc


def _load_intensity(path: str) -> IntensityMoments:
    try:
        m = read_moments_csv(path)
    except (ValueError, IndexError, StopIteration) as exc:
        raise ValidationError(f"malformed moments file {path}: {exc}") from exc
    if isinstance(m, PhotonMoments):
        m = intensity_from_photon_moments(m)
    return m


def _reduce(m: IntensityMoments, modes) -> IntensityMoments:
    if modes is None or m.provenance == "reduced":
        return m
    if not modes > 0:
        raise ValidationError("number of modes must be positive")
    return reduce_to_single_mode(m, float(modes))


# simulate


def cmd_simulate(cfg: RunConfig, out: Output) -> int:
    params = cfg.model()
    sweep = cfg.sweep()
    if cfg["channels_format"] not in ("csv", "binary"):
        raise ValidationError("channels_format must be csv or binary")
    if cfg["n_windows"] < 1:
        raise ValidationError("n_windows must be positive")
    ch = sample_channels(params, int(cfg["n_windows"]), cfg.seed)
    if cfg["channels_format"] == "csv":
        out.csv("channels.csv", ch.write_csv)
    else:
        out.binary("channels.bin", lambda c, path: c.write_binary(path), ch)
    summary = []
    for w_n in sweep.w_n_list:
        dist = build_state_distribution(params, sweep.w_p, w_n)
        tag = f"wp{sweep.w_p}_wn{w_n:02d}"
        out.csv(f"state_{tag}.csv", lambda path: write_csv(dist, path))
        row = {"w_n": w_n, "model_mean_per_beam": [float(x) for x in dist.means()]}
        if cfg["histograms"] and (sweep.w_p or w_n):
            try:
                hist = build_compound_realizations(ch, sweep.w_p, w_n, int(cfg["stride"]), bool(cfg["overlapping"]),
                                                   cfg["noise_layout"])
            except ValueError as exc:
                raise ValidationError(f"w_n={w_n}: {exc}") from exc
            out.csv(f"hist_{tag}.csv", lambda path: write_csv(hist, path))
            row["histogram_mean_counts"] = [float(x) for x in hist.means()]
            row["histogram_zero_mass"] = float(hist.mass[(0,) * hist.n_beams])
        summary.append(row)
    out.json("simulate_summary.json", {"points": summary, "files": list(out.written)})
    print(f"simulate: {len(ch)} windows, {len(sweep.w_n_list)} sweep points -> {out.root}")
    return EXIT_OK


# reconstruct


def _detector(cfg: RunConfig) -> DetectorModel:
    try:
        if cfg["n_pixels"] is not None:
            if cfg["efficiency"] is None:
                raise ValidationError("--efficiency is required with --n-pixels")
            return DetectorModel(int(cfg["n_pixels"]), float(cfg["efficiency"]), float(cfg["dark_total"]))
        if cfg["w_p"] is not None and cfg["w_n"] is not None:
            p = cfg.model()
            return DetectorModel.effective(int(cfg["w_p"]), int(cfg["w_n"]), p.eta_s, p.eta_i, p.d_s, p.d_i)
    except ValueError as exc:
        raise ValidationError(str(exc)) from exc
    raise ValidationError("detector needs --n-pixels/--efficiency or the compound-beam --w-p/--w-n")


def cmd_reconstruct(cfg: RunConfig, out: Output) -> int:
    f = _load_distribution(cfg["histogram"])
    if f.kind != "photocount_histogram":
        raise ValidationError("input must be a photocount histogram")
    try:
        f.check_normalized()
    except ValueError as exc:
        raise ValidationError(str(exc)) from exc
    det = _detector(cfg)
    n_max = cfg["photon_max"]
    shape = None if n_max is None else (int(n_max) + 1,) * f.n_beams
    try:
        res = reconstruct_em(f, det, photon_shape=shape, max_iters=int(cfg["max_iters"]), tol=float(cfg["tol"]),
                             init=cfg["init"], keep_history=True, step_tol=cfg["step_tol"])
    except ValueError as exc:
        raise ValidationError(str(exc)) from exc
    out.csv("photon_distribution.csv", lambda path: write_csv(res.distribution, path))
    out.csv("convergence_log.csv", lambda path: _write_rows(path, ["iteration", "log_likelihood"], enumerate(res.history)))
    meta = res.metadata()
    meta["detector"] = asdict(det)
    out.json("reconstruct_summary.json", meta)
    print(f"reconstruct: {res.iterations} iterations, KL={res.kl_divergence:.3g}, converged={res.converged}")
    if not res.converged:
        raise ConvergenceError(f"EM did not converge within {res.iterations} iterations")
    return EXIT_OK


# moments


def cmd_moments(cfg: RunConfig, out: Output) -> int:
    dist = _load_distribution(cfg["distribution"])
    order = int(cfg["max_order"])
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", RuntimeWarning)
        try:
            pm = moments_from_distribution(dist, order)
            im = intensity_moments_from_distribution(dist, order)
        except ValueError as exc:
            raise ValidationError(str(exc)) from exc
    out.csv("photon_moments.csv", lambda path: write_moments_csv(pm, path))
    out.csv("intensity_moments.csv", lambda path: write_moments_csv(im, path))
    if cfg["modes"] is not None:
        reduced = _reduce(im, cfg["modes"])
        out.csv("reduced_moments.csv", lambda path: write_moments_csv(reduced, path))
    out.json("moments_summary.json", {"warnings": [str(w.message) for w in caught], "max_order": order,
                                      "n_beams": dist.n_beams})
    print(f"moments: {len(im.values)} intensity moments up to order {order}")
    return EXIT_OK


# invariants


def _nu_or_none(deltas):
    try:
        return [float(x) for x in symplectic_eigenvalues_from_quis(deltas)]
    except (ValueError, np.linalg.LinAlgError):
        return None


def invariant_report(m: IntensityMoments, strict: bool = False) -> dict:
    """All QUIs of a 1-3 beam field from its single-mode intensity moments."""
    if m.n_beams == 3:
        F._check_symmetric(m, strict)
    try:
        results = F.all_from_moments(m)
    except KeyError as exc:
        raise ValidationError(f"missing moment orders: {exc}") from exc
    rows = []
    for r in results:
        doc = r.to_json_dict()
        lo, hi = r.value_bounds
        doc["value_lower"], doc["value_upper"] = float(lo), float(hi)
        # crossed bounds mean the moments are not those of any Gaussian state
        doc["bounds_consistent"] = bool(r.residue_lower <= r.residue_upper)
        meas = float(r.measurable_part)
        doc["ratio"] = max(abs(float(r.residue_lower)), abs(float(r.residue_upper))) / meas if meas else math.nan
        rows.append(doc)
    top = float(results[-1].measurable_part)
    report = {
        "n_beams": m.n_beams,
        "invariants": rows,
        "purity": {"standard": top ** -0.5, "inverse_square": top ** -2.0,
                   "labels": {"standard": "1/sqrt(det A)", "inverse_square": "Delta^N_N^(-2)"}},
        "symplectic_eigenvalues_at_residue_upper": _nu_or_none([d["value_lower"] for d in rows]),
        "symplectic_eigenvalues_at_residue_lower": _nu_or_none([d["value_upper"] for d in rows]),
        "corrections": F.correction_notes(),
    }
    return report


def params_report(params: GaussianStateParams, tol: float) -> dict:
    """Exact report for known Gaussian parameters, moments route alongside."""
    cm = build_covariance(params)
    n = params.n_beams
    m = moments_from_params(params, 2 * n)
    report = invariant_report(m)
    for row, k in zip(report["invariants"], range(1, n + 1)):
        row["minors_value"] = float(qui_from_covariance(cm, k))
        row["residue_true"] = float(F.residue_from_params(params, k))
    report["symplectic_eigenvalues"] = [float(x) for x in symplectic_eigenvalues(cm).eigenvalues]
    report["physical"] = bool(is_physical(cm, tol))
    report["purity"].update({k: float(v) for k, v in purities(cm).items()})
    return report


def _invariant_csv_rows(report: dict):
    for row in report["invariants"]:
        yield [row["N"], row["k"], row.get("value", row.get("measurable_part")), row["residue_lower"],
               row["residue_upper"], row["value_lower"], row["value_upper"], row["ratio"], row["exact"]]


INVARIANT_HEADER = ["N", "k", "measurable_part", "residue_lower", "residue_upper", "value_lower", "value_upper",
                    "ratio", "exact"]

SWEEP_QUANTITIES = {
    "delta11": lambda p: (p.delta11, p.delta11, p.delta11),
    "delta22": lambda p: (p.delta22, p.delta22, p.delta22),
    "delta33": lambda p: (p.delta33, p.delta33, p.delta33),
    "delta21": lambda p: (p.delta21_w, p.delta21_r_lower, p.delta21_r_upper),
    "delta31": lambda p: (p.delta31_w, p.delta31_r_lower, p.delta31_r_upper),
    "delta32": lambda p: (p.delta32_w, p.delta32_r_lower, p.delta32_r_upper),
    "delta32_symmetric_bounds": lambda p: (p.delta32_w, p.delta32_sym_lower, p.delta32_sym_upper),
    "ratio21": lambda p: (p.ratio21, p.ratio21, p.ratio21),
    "ratio31": lambda p: (p.ratio31, p.ratio31, p.ratio31),
    "ratio32": lambda p: (p.ratio32, p.ratio32, p.ratio32),
    "purity_standard": lambda p: (p.delta33 ** -0.5,) * 3,
    "purity_inverse_square": lambda p: (p.delta33 ** -2.0,) * 3,
    "ppt": lambda p: (p.lhs, p.rhs_lower, p.rhs_upper),
}


def _sweep(cfg: RunConfig, modes: float, form: str = "exact", tol: float = 1e-9):
    params, sweep = cfg.model(), cfg.sweep()
    if form not in FORMS:
        raise ValidationError(f"form must be one of {FORMS}")
    points = noise_sweep_report(sweep, modes, params, tol=tol, jobs=cfg.jobs, form=form)
    if cfg.strict:
        bad = [p.w_n for p in points if not p.physical]
        if bad:
            raise ValidationError(f"inverted model states are not physical at w_n={bad}")
    return params, sweep, points


def _write_sweep(out: Output, points, names) -> None:
    for name in names:
        rows = [(p.w_n, p.mean_noise, *SWEEP_QUANTITIES[name](p)) for p in points]
        out.csv(f"sweep_{name}.csv", lambda path: write_sweep_csv(path, rows))


def _ppt_rows(points):
    for p in points:
        yield [p.w_n, p.mean_noise, p.lhs, p.rhs_lower, p.rhs_upper, p.verdict, p.npt_oracle]


def _ppt_summary(points) -> dict:
    th = thresholds(points)
    return {
        "thresholds": th,
        "monotone_verdicts": verdict_sequence_is_monotone(points),
        "sound": all(p.npt_oracle for p in points if p.verdict == "entangled"),
        "points": [{"w_n": p.w_n, "mean_noise": p.mean_noise, "lhs": p.lhs, "rhs_lower": p.rhs_lower,
                    "rhs_upper": p.rhs_upper, "verdict": p.verdict, "npt_oracle": p.npt_oracle} for p in points],
    }


def cmd_invariants(cfg: RunConfig, out: Output) -> int:
    sources = [k for k in ("moments", "distribution", "params") if cfg[k] is not None] + (["sweep"] if cfg["sweep"]
                                                                                         else [])
    if len(sources) != 1:
        raise ValidationError("give exactly one of --moments, --distribution, --params, --sweep")
    src = sources[0]
    if src == "sweep":
        modes = DEFAULT_MODES if cfg["modes"] is None else float(cfg["modes"])
        _, _, points = _sweep(cfg, modes)
        _write_sweep(out, points, [k for k in SWEEP_QUANTITIES if k != "ppt"])
        out.json("invariants_sweep.json", [p.to_json_dict() for p in points])
        print(f"invariants: {len(points)} sweep points -> {out.root}")
        return EXIT_OK
    if src == "params":
        try:
            params = GaussianStateParams.from_json(Path(cfg["params"]).read_text())
        except (KeyError, ValueError, TypeError) as exc:
            raise ValidationError(f"malformed parameter file: {exc}") from exc
        report = params_report(params, float(cfg["physical_tol"]))
    else:
        if src == "moments":
            m = _load_intensity(cfg["moments"])
        else:
            dist = _load_distribution(cfg["distribution"])
            m = intensity_moments_from_distribution(dist, 2 * dist.n_beams)
        m = _reduce(m, 1.0 if cfg["modes"] is None else cfg["modes"])
        report = invariant_report(m, cfg.strict)
    out.json("invariants.json", report)
    out.csv("invariants.csv", lambda path: _write_rows(path, INVARIANT_HEADER, _invariant_csv_rows(report)))
    for row in report["invariants"]:
        print(f"Delta^{row['N']}_{row['k']}: [{row['value_lower']:.10g}, {row['value_upper']:.10g}]")
    return EXIT_OK


# entangle


PPT_HEADER = ["w_n", "mean_noise", "lhs", "rhs_lower", "rhs_upper", "verdict", "npt_oracle"]


def cmd_entangle(cfg: RunConfig, out: Output) -> int:
    form, tol = cfg["form"], float(cfg["tol"])
    if cfg["moments"] is not None:
        m = _reduce(_load_intensity(cfg["moments"]), cfg["modes"])
        try:
            v = ppt_from_moments(m, tol, cfg.strict, form)
        except KeyError as exc:
            raise ValidationError(f"missing moment orders: {exc}") from exc
        out.json("ppt.json", v.to_json_dict())
        print(f"entangle: {v.verdict} (lhs={v.lhs:.6g}, rhs in [{v.rhs_lower:.6g}, {v.rhs_upper:.6g}])")
        return EXIT_OK
    modes = DEFAULT_MODES if cfg["modes"] is None else float(cfg["modes"])
    _, _, points = _sweep(cfg, modes, form, tol)
    out.csv("ppt_sweep.csv", lambda path: _write_rows(path, PPT_HEADER, _ppt_rows(points)))
    summary = _ppt_summary(points)
    out.json("ppt_sweep.json", summary)
    th = summary["thresholds"]
    print(f"entangle: last entangled <n_n>={th['last_entangled']:.4g}, first separable <n_n>={th['first_separable']:.4g}")
    return EXIT_OK


# derive


def cmd_derive(cfg: RunConfig, out: Output) -> int:
    n, k = int(cfg["n_beams"]), int(cfg["k"])
    if not 1 <= k <= n:
        raise ValidationError("need 1 <= k <= n_beams")
    try:
        result = derive(n, k)
    except (ValueError, DerivationError) as exc:
        raise ValidationError(str(exc)) from exc
    check = check_against_builtin(result, int(cfg["n_points"]), cfg.seed)
    doc = {"derived": emit_term_table(result), "builtin_check": check}
    if check.get("builtin") and not check["coefficients_identical"]:
        builtin = F.TABLES[(n, k)]
        doc["builtin_table"] = [{"coefficient": [c.numerator, c.denominator], "factors": [list(f) for f in p]}
                                for c, p in builtin.terms]
    out.json(f"derive_N{n}_k{k}.json", doc)
    print(describe(result))
    if check.get("builtin"):
        status = "identical" if check["coefficients_identical"] else (
            "coefficients differ, values equivalent" if check["value_equivalent"] else "MISMATCH")
        print(f"built-in table: {status}")
        if not check["value_equivalent"]:
            raise ValidationError("derived table disagrees with the built-in closed form")
    return EXIT_OK


# report


def cmd_report(cfg: RunConfig, out: Output) -> int:
    params, sweep, points = _sweep(cfg, float(cfg["modes"]), cfg["form"], float(cfg["tol"]))
    _write_sweep(out, points, list(SWEEP_QUANTITIES))
    out.csv("ppt_sweep.csv", lambda path: _write_rows(path, PPT_HEADER, _ppt_rows(points)))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        gp = gaussian_params_of_model(params, sweep.w_p, sweep.w_n_list[0], float(cfg["modes"]))
    summary = {
        "mean_correlated_per_beam": mean_correlated(params, sweep.w_p),
        "ppt": {k: v for k, v in _ppt_summary(points).items() if k != "points"},
        "physical_points": [p.w_n for p in points if p.physical],
        "unphysical_points": [p.w_n for p in points if not p.physical],
        "first_point_params": gp.to_json_dict(),
        "corrections": F.correction_notes(),
        "convention": F.CONVENTION_NOTE,
        "points": [p.to_json_dict() for p in points],
    }
    out.json("report.json", summary)
    th = summary["ppt"]["thresholds"]
    print(f"report: {len(points)} points; mean correlated photons per beam {summary['mean_correlated_per_beam']:.5g}; "
          f"entangled up to <n_n>={th['last_entangled']:.4g}, separable from {th['first_separable']:.4g}")
    return EXIT_OK


COMMANDS = {
    "simulate": cmd_simulate,
    "reconstruct": cmd_reconstruct,
    "moments": cmd_moments,
    "invariants": cmd_invariants,
    "entangle": cmd_entangle,
    "derive": cmd_derive,
    "report": cmd_report,
}


# argument parsing


def _kv(text: str):
    if "=" not in text:
        raise argparse.ArgumentTypeError("expected key=value")
    key, val = text.split("=", 1)
    return key, float(val)


def _build_parser() -> argparse.ArgumentParser:
    S = argparse.SUPPRESS
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=S, help="JSON file with options (flags override it)")
    common.add_argument("--seed", type=int, default=S)
    common.add_argument("--jobs", type=int, default=S, help="worker processes for sweeps")
    common.add_argument("--out-dir", dest="out_dir", default=S)
    common.add_argument("--strict", action="store_true", default=S,
                        help="asymmetric moments and unphysical model states become errors")

    model = argparse.ArgumentParser(add_help=False)
    model.add_argument("--model-param", dest="model", type=_kv, action="append", default=S, metavar="KEY=VALUE",
                       help="override a twin-beam model parameter, e.g. b_p=0.01")

    grid = argparse.ArgumentParser(add_help=False)
    grid.add_argument("--w-p", dest="w_p", type=int, default=S)
    grid.add_argument("--w-n", dest="w_n_list", type=int, nargs="+", default=S, help="even noise window counts")

    ap = argparse.ArgumentParser(prog="gaussqui", parents=[common], description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", parents=[common, model, grid], help="synthetic channels and model distributions")
    p.add_argument("--n-windows", dest="n_windows", type=int, default=S)
    p.add_argument("--stride", type=int, default=S)
    p.add_argument("--overlapping", action="store_true", default=S)
    p.add_argument("--noise-layout", dest="noise_layout", choices=["interleaved", "split_halves"], default=S)
    p.add_argument("--no-histograms", dest="histograms", action="store_false", default=S)
    p.add_argument("--channels-format", dest="channels_format", choices=["csv", "binary"], default=S)

    p = sub.add_parser("reconstruct", parents=[common, model], help="EM photon-number reconstruction")
    p.add_argument("--histogram", default=S)
    p.add_argument("--n-pixels", dest="n_pixels", type=int, default=S)
    p.add_argument("--efficiency", type=float, default=S)
    p.add_argument("--dark-total", dest="dark_total", type=float, default=S)
    p.add_argument("--w-p", dest="w_p", type=int, default=S, help="effective compound-beam detector")
    p.add_argument("--w-n", dest="w_n", type=int, default=S)
    p.add_argument("--photon-max", dest="photon_max", type=int, default=S)
    p.add_argument("--max-iters", dest="max_iters", type=int, default=S)
    p.add_argument("--tol", type=float, default=S)
    p.add_argument("--step-tol", dest="step_tol", type=float, default=S)

    p = sub.add_parser("moments", parents=[common], help="photon and intensity moments of a distribution")
    p.add_argument("--distribution", default=S)
    p.add_argument("--max-order", dest="max_order", type=int, default=S)
    p.add_argument("--modes", type=float, default=S, help="also write single-mode moments for M modes")

    p = sub.add_parser("invariants", parents=[common, model, grid], help="QUIs, residue bounds, purities")
    p.add_argument("--moments", default=S)
    p.add_argument("--distribution", default=S)
    p.add_argument("--params", default=S, help="Gaussian parameter JSON")
    p.add_argument("--sweep", action="store_true", default=S, help="model noise sweep")
    p.add_argument("--modes", type=float, default=S)
    p.add_argument("--physical-tol", dest="physical_tol", type=float, default=S)

    p = sub.add_parser("entangle", parents=[common, model, grid], help="PPT verdicts from moments")
    p.add_argument("--moments", default=S)
    p.add_argument("--modes", type=float, default=S)
    p.add_argument("--tol", type=float, default=S)
    p.add_argument("--form", choices=list(FORMS), default=S)

    p = sub.add_parser("derive", parents=[common], help="derive a QUI term table")
    p.add_argument("n_beams", type=int)
    p.add_argument("k", type=int)
    p.add_argument("--n-points", dest="n_points", type=int, default=S)

    p = sub.add_parser("report", parents=[common, model, grid], help="full model sweep report")
    p.add_argument("--modes", type=float, default=S)
    p.add_argument("--tol", type=float, default=S)
    p.add_argument("--form", choices=list(FORMS), default=S)
    return ap


def parse_config(argv=None) -> RunConfig:
    ns = vars(_build_parser().parse_args(argv))
    command = ns.pop("command")
    path = ns.pop("config", None)
    globals_ = {k: ns.pop(k) for k in GLOBAL_KEYS if k in ns}
    if "model" in ns:
        ns["model"] = dict(ns["model"])
    return load_config(command, path, ns, globals_)


def main(argv=None) -> int:
    try:
        cfg = parse_config(argv)
        return COMMANDS[cfg.command](cfg, Output(cfg))
    except ConvergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONVERGENCE
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ValidationError, ValueError, KeyError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    raise SystemExit(main())
