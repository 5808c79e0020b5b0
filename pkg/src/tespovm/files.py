"""On-disk formats for the batch pipeline.

Traces are CSV (one ``amplitude_mv`` column, ground truth in a
``.truth.csv`` sidecar with a ``count`` column); count tables, POVM
matrices, estimates and reports are JSON with explicit dimensions and
row-major nested arrays. Every artifact embeds the hash of the producing
config so stages refuse to mix runs. All writers are deterministic:
sorted keys, no timestamps, repr-exact floats.
"""

from __future__ import annotations

import csv
import hashlib
import json
from pathlib import Path

import numpy as np

from .calibration import CountTable, GaussianMixtureFit, ThresholdSet
from .errors import LineageError, SchemaError
from .photon_stats import Probe, ProbeEnsemble, PovmMatrix, geometric_ensemble
from .tes_sim import AmplitudeTrace, DetectorPhysicalConfig
from .tomography import ReconstructionConfig, ReconstructionResult

TRACE_PREFIX = "trace_probe_"


def default_config() -> dict:
    """Pipeline defaults: the 20-probe geometric ensemble on a 13 mV grid."""
    ensemble = geometric_ensemble()
    return {
        "detector": {
            "eta": 0.051,
            "gamma": 0.0,
            "baseline_mv": 0.0,
            "peak_spacing_mv": 13.0,
            "sigma0_mv": 2.0,
            "sigma_slope_mv": 0.0,
            "saturation_count": None,
        },
        "probes": [
            {
                "id": p.id,
                "mean_photons": p.mean_photons,
                "n_pulses": p.n_pulses,
                "attenuation_db": p.attenuation_db,
            }
            for p in ensemble.probes
        ],
        "calibration": {"bin_width_mv": 1.3, "max_peaks": 16},
        "reconstruction": {
            "truncation": 140,
            "n_outcomes": 12,
            "reg_weight": 1e-8,
            "max_iters": 200_000,
            "tol": 1e-10,
        },
    }


def config_hash(config: dict) -> str:
    """Hash of the canonical JSON form of a config."""
    canon = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()[:16]


def _jsonable(obj):
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    return obj


def write_json(path, payload: dict):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        json.dump(_jsonable(payload), fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_json(path) -> dict:
    try:
        with open(path) as fh:
            return json.load(fh)
    except OSError as exc:
        raise SchemaError(f"{path}: cannot read ({exc})") from exc
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}: not valid JSON ({exc})") from exc


def _require(mapping: dict, key: str, where: str):
    if key not in mapping:
        raise SchemaError(f"{where}: missing field '{key}'")
    return mapping[key]


def check_lineage(expected_hash: str, found_hash: str, what: str, force: bool):
    if found_hash != expected_hash and not force:
        raise LineageError(
            f"{what} was produced by config {found_hash}, expected "
            f"{expected_hash}; pass --force to override"
        )


# -- config ------------------------------------------------------------------

def load_config(path) -> dict:
    config = read_json(path)
    validate_config(config)
    return config


def validate_config(config: dict):
    if not isinstance(config, dict):
        raise SchemaError("config: top level must be an object")
    probes = _require(config, "probes", "config")
    if not isinstance(probes, list) or not probes:
        raise SchemaError("config: 'probes' must be a nonempty list")
    for i, probe in enumerate(probes):
        if not isinstance(probe, dict):
            raise SchemaError(f"config: probe at index {i} must be an object")
        pid = probe.get("id", i)
        if "mean_photons" not in probe:
            raise SchemaError(f"config: probe {pid}: missing field 'mean_photons'")
    for section in ("detector", "calibration", "reconstruction"):
        if section in config and not isinstance(config[section], dict):
            raise SchemaError(f"config: '{section}' must be an object")


def config_detector(config: dict) -> DetectorPhysicalConfig:
    section = config.get("detector", {})
    try:
        return DetectorPhysicalConfig(
            eta=section.get("eta", 0.051),
            gamma=section.get("gamma", 0.0),
            baseline_mv=section.get("baseline_mv", 0.0),
            peak_spacing_mv=section.get("peak_spacing_mv", 13.0),
            sigma0_mv=section.get("sigma0_mv", 2.0),
            sigma_slope_mv=section.get("sigma_slope_mv", 0.0),
            saturation_count=section.get("saturation_count"),
        )
    except ValueError as exc:
        raise SchemaError(f"config: detector: {exc}") from exc


def config_ensemble(config: dict) -> ProbeEnsemble:
    probes = []
    for i, entry in enumerate(config["probes"]):
        pid = entry.get("id", i)
        try:
            probes.append(
                Probe(
                    id=int(pid),
                    mean_photons=float(entry["mean_photons"]),
                    n_pulses=int(entry.get("n_pulses", 100_000)),
                    attenuation_db=entry.get("attenuation_db"),
                )
            )
        except (TypeError, ValueError) as exc:
            raise SchemaError(f"config: probe {pid}: {exc}") from exc
    try:
        return ProbeEnsemble(tuple(probes))
    except ValueError as exc:
        raise SchemaError(f"config: probes: {exc}") from exc


def config_reconstruction(config: dict, **overrides) -> ReconstructionConfig:
    section = dict(config.get("reconstruction", {}))
    section.update({k: v for k, v in overrides.items() if v is not None})
    known = {"truncation", "n_outcomes", "reg_weight", "max_iters", "tol", "init_eta"}
    try:
        return ReconstructionConfig(**{k: v for k, v in section.items() if k in known})
    except (TypeError, ValueError) as exc:
        raise SchemaError(f"config: reconstruction: {exc}") from exc


def config_calibration(config: dict) -> dict:
    section = config.get("calibration", {})
    n_outcomes = config.get("reconstruction", {}).get("n_outcomes", 12)
    out = {
        "bin_width_mv": float(section.get("bin_width_mv", 1.3)),
        "max_peaks": int(section.get("max_peaks", n_outcomes + 4)),
    }
    if out["bin_width_mv"] <= 0:
        raise SchemaError("config: calibration: bin_width_mv must be positive")
    if out["max_peaks"] < 1:
        raise SchemaError("config: calibration: max_peaks must be >= 1")
    return out


# -- traces ------------------------------------------------------------------

def trace_filename(probe_id: int) -> str:
    return f"{TRACE_PREFIX}{probe_id:03d}.csv"


def truth_filename(probe_id: int) -> str:
    return f"{TRACE_PREFIX}{probe_id:03d}.truth.csv"


def write_trace_csv(directory, trace: AmplitudeTrace):
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    with open(directory / trace_filename(trace.probe_id), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["amplitude_mv"])
        for a in trace.amplitudes_mv:
            writer.writerow([repr(float(a))])
    if trace.truth_counts is not None:
        with open(directory / truth_filename(trace.probe_id), "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["count"])
            for c in trace.truth_counts:
                writer.writerow([int(c)])


def read_trace_csv(path, probe_id: int, truth_path=None) -> AmplitudeTrace:
    def read_column(p, name, conv):
        with open(p, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header is None or header[0] != name:
                raise SchemaError(f"{p}: expected a '{name}' header column")
            try:
                return [conv(row[0]) for row in reader if row]
            except (ValueError, IndexError) as exc:
                raise SchemaError(f"{p}: bad {name} value ({exc})") from exc

    amps = np.asarray(read_column(path, "amplitude_mv", float))
    truth = None
    if truth_path is not None and Path(truth_path).exists():
        truth = np.asarray(read_column(truth_path, "count", int))
        if truth.shape != amps.shape:
            raise SchemaError(f"{truth_path}: sidecar length differs from trace")
    return AmplitudeTrace(probe_id=probe_id, amplitudes_mv=amps, truth_counts=truth)


# -- manifest and ensemble ---------------------------------------------------

def write_manifest(directory, config: dict, seed: int):
    write_json(
        Path(directory) / "manifest.json",
        {
            "config_hash": config_hash(config),
            "seed": seed,
            "config": config,
            "traces": [
                {
                    "probe_id": p["id"],
                    "file": trace_filename(p["id"]),
                    "truth_file": truth_filename(p["id"]),
                }
                for p in config["probes"]
            ],
        },
    )


def read_manifest(directory) -> dict:
    path = Path(directory) / "manifest.json"
    if not path.exists():
        raise SchemaError(f"{directory}: no manifest.json; not a simulate output?")
    manifest = read_json(path)
    for key in ("config_hash", "seed", "config", "traces"):
        _require(manifest, key, str(path))
    validate_config(manifest["config"])
    return manifest


def write_ensemble(path, ensemble: ProbeEnsemble, cfg_hash: str):
    write_json(
        path,
        {
            "config_hash": cfg_hash,
            "probes": [
                {
                    "id": p.id,
                    "mean_photons": p.mean_photons,
                    "n_pulses": p.n_pulses,
                    "attenuation_db": p.attenuation_db,
                }
                for p in ensemble.probes
            ],
        },
    )


def read_ensemble(path) -> tuple[ProbeEnsemble, str]:
    payload = read_json(path)
    cfg_hash = _require(payload, "config_hash", str(path))
    validate_config({"probes": _require(payload, "probes", str(path))})
    ensemble = config_ensemble(payload)
    return ensemble, cfg_hash


# -- count tables ------------------------------------------------------------

def write_count_table(path, table: CountTable, cfg_hash: str, method: str,
                      skipped_probe_ids=()):
    payload = {
        "config_hash": cfg_hash,
        "method": method,
        "n_outcomes": table.n_outcomes,
        "n_probes": table.n_probes,
        "probe_ids": list(table.probe_ids) if table.probe_ids is not None else None,
        "skipped_probe_ids": list(skipped_probe_ids),
        "counts": table.counts,
        "probs": table.probs,
    }
    write_json(path, payload)


def read_count_table(path) -> tuple[CountTable, str]:
    payload = read_json(path)
    cfg_hash = _require(payload, "config_hash", str(path))
    probs = np.asarray(_require(payload, "probs", str(path)), dtype=float)
    counts = payload.get("counts")
    probe_ids = payload.get("probe_ids")
    try:
        if counts is not None:
            table = CountTable(
                probs,
                counts=np.asarray(counts, dtype=np.int64),
                probe_ids=tuple(probe_ids) if probe_ids is not None else None,
            )
        else:
            table = CountTable.from_probs(
                probs, probe_ids=tuple(probe_ids) if probe_ids is not None else None
            )
    except ValueError as exc:
        raise SchemaError(f"{path}: {exc}") from exc
    return table, cfg_hash


# -- POVM and results --------------------------------------------------------

def write_povm(path, result: ReconstructionResult, cfg: ReconstructionConfig,
               cfg_hash: str):
    write_json(
        path,
        {
            "config_hash": cfg_hash,
            "n_outcomes": result.povm.n_outcomes,
            "truncation": result.povm.truncation,
            "last_outcome_cumulative": result.povm.last_outcome_cumulative,
            "entries": result.povm.entries,
            "reg_weight": cfg.reg_weight,
            "init_eta": cfg.init_eta,
            "converged": result.converged,
            "n_iters": result.n_iters,
            "stop_reason": result.stop_reason,
            "noise_floor": result.noise_floor,
            "data_term": result.data_term,
            "reg_term": result.reg_term,
            "per_probe_residuals": result.per_probe_residuals,
            "probe_tail_mass": result.probe_tail_mass,
        },
    )


def read_povm(path) -> tuple[PovmMatrix, str]:
    payload = read_json(path)
    cfg_hash = _require(payload, "config_hash", str(path))
    entries = np.asarray(_require(payload, "entries", str(path)), dtype=float)
    try:
        povm = PovmMatrix(
            entries,
            last_outcome_cumulative=payload.get("last_outcome_cumulative", True),
        )
    except ValueError as exc:
        raise SchemaError(f"{path}: {exc}") from exc
    return povm, cfg_hash


def write_convergence_log(path, result: ReconstructionResult, stride: int = 100):
    history = result.objective_history
    lines = ["# iteration objective"]
    for i in range(0, history.size, stride):
        lines.append(f"{i} {float(history[i])!r}")
    if (history.size - 1) % stride:
        lines.append(f"{history.size - 1} {float(history[-1])!r}")
    lines.append(
        f"# stop={result.stop_reason} iters={result.n_iters} "
        f"data_term={float(result.data_term)!r} reg_term={float(result.reg_term)!r}"
    )
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(lines) + "\n")


def write_fit_report(path, fit: GaussianMixtureFit, thresholds: ThresholdSet | None,
                     cfg_hash: str):
    write_json(
        path,
        {
            "config_hash": cfg_hash,
            "bin_width_mv": fit.bin_width_mv,
            "n_events": fit.n_events,
            "goodness": fit.goodness,
            "components": [
                {"weight": c.weight, "mean_mv": c.mean_mv, "sigma_mv": c.sigma_mv}
                for c in fit.components
            ],
            "thresholds_mv": list(thresholds.cut_points_mv) if thresholds else None,
        },
    )


def write_estimate(path, estimate, cfg_hash: str, method: str):
    write_json(
        path,
        {
            "config_hash": cfg_hash,
            "method": method,
            "eta_hat": estimate.eta_hat,
            "eta_se": estimate.eta_se,
            "per_probe_etas": estimate.per_probe_etas,
            "gamma_hat": estimate.gamma_hat,
            "gamma_se": estimate.gamma_se,
            "gamma_upper": estimate.gamma_upper,
            "per_probe_gammas": estimate.per_probe_gammas,
            "loglik": estimate.loglik,
        },
    )


def read_estimate(path) -> tuple[dict, str]:
    payload = read_json(path)
    cfg_hash = _require(payload, "config_hash", str(path))
    _require(payload, "eta_hat", str(path))
    return payload, cfg_hash
