from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import numpy as np

from .exceptions import DimensionError
from .services.bootstrap import BootstrapResult
from .services.lti import NoiseSpec, StateFeedbackGain
from .services.synthesis import FirResponse, SynthesisResult
from .services.sysid import ROLLOUT_SCHEMA_VERSION, EstimateWithError, RolloutData


def _number(value: float) -> str:
    return repr(float(value))


def json_safe(value):
    if isinstance(value, np.floating):
        value = float(value)
    if isinstance(value, float) and not math.isfinite(value):
        return "inf" if value > 0 else ("-inf" if value < 0 else "nan")
    if isinstance(value, dict):
        return {key: json_safe(item) for key, item in value.items()}
    if isinstance(value, (list, tuple)):
        return [json_safe(item) for item in value]
    return value


def write_json(path: Path | str, payload: dict) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(json_safe(payload), indent=2, sort_keys=True) + "\n")
    return path


def read_json(path: Path | str) -> dict:
    path = Path(path)
    try:
        return json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise DimensionError(f"{path} is not valid JSON: {exc}") from exc


# ---------------------------------------------------------------------------
# Rollouts: CSV body plus JSON header
# ---------------------------------------------------------------------------


def _rollout_paths(path: Path | str) -> tuple[Path, Path]:
    path = Path(path)
    base = path.with_suffix("") if path.suffix in (".csv", ".json") else path
    return base.with_suffix(".csv"), base.with_suffix(".json")


def write_rollouts(data: RolloutData, path: Path | str) -> tuple[Path, Path]:
    """One CSV row per (rollout, t); inputs and noises are blank on the final state row."""

    csv_path, header_path = _rollout_paths(path)
    csv_path.parent.mkdir(parents=True, exist_ok=True)
    n, p = data.n, data.p
    columns = ["rollout", "t"] + [f"x_{i + 1}" for i in range(n)] + [f"u_{j + 1}" for j in range(p)]
    if data.noises is not None:
        columns += [f"w_{i + 1}" for i in range(n)]
    with csv_path.open("w", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(columns)
        for r in range(data.N):
            for t in range(data.T + 1):
                row = [r, t] + [_number(v) for v in data.states[r, t]]
                if t < data.T:
                    row += [_number(v) for v in data.inputs[r, t]]
                    if data.noises is not None:
                        row += [_number(v) for v in data.noises[r, t]]
                else:
                    row += [""] * (len(columns) - len(row))
                writer.writerow(row)
    header = data.header() | {"noises": data.noises is not None}
    write_json(header_path, header)
    return csv_path, header_path


def read_rollouts(path: Path | str) -> RolloutData:
    csv_path, header_path = _rollout_paths(path)
    header = read_json(header_path)
    if header.get("schema_version") != ROLLOUT_SCHEMA_VERSION:
        raise DimensionError(f"{header_path}: unsupported rollout schema {header.get('schema_version')!r}")
    N, T, n, p = header["N"], header["T"], header["n"], header["p"]
    states = np.zeros((N, T + 1, n))
    inputs = np.zeros((N, T, p))
    noises = np.zeros((N, T, n)) if header.get("noises") else None
    with csv_path.open(newline="") as handle:
        for record in csv.DictReader(handle):
            r, t = int(record["rollout"]), int(record["t"])
            states[r, t] = [float(record[f"x_{i + 1}"]) for i in range(n)]
            if t < T:
                inputs[r, t] = [float(record[f"u_{j + 1}"]) for j in range(p)]
                if noises is not None:
                    noises[r, t] = [float(record[f"w_{i + 1}"]) for i in range(n)]
    noise = None
    if header.get("sigma_u") is not None and header.get("sigma_w") is not None:
        noise = NoiseSpec(header["sigma_u"], header["sigma_w"])
    return RolloutData(states, inputs, noises, header.get("seed"), noise)


# ---------------------------------------------------------------------------
# Estimates, controllers and synthesis results
# ---------------------------------------------------------------------------


def write_estimate(est: EstimateWithError, path: Path | str) -> Path:
    return write_json(path, est.to_dict())


def read_estimate(path: Path | str) -> EstimateWithError:
    return EstimateWithError.from_dict(read_json(path))


def write_synthesis_result(result: SynthesisResult, path: Path | str) -> Path:
    return write_json(path, result.to_dict())


def read_controller(path: Path | str) -> StateFeedbackGain | FirResponse:
    """Controller from a synthesis result file or a bare ``{"K": ...}`` gain file."""

    payload = read_json(path)
    controller = payload.get("controller", payload)
    if controller is None:
        raise DimensionError(f"{path} holds no controller (status {payload.get('status')!r})")
    if controller.get("type") == "fir" or "phi_x" in controller:
        return FirResponse.from_dict(controller)
    if "K" in controller:
        return StateFeedbackGain(controller["K"])
    raise DimensionError(f"{path} holds neither a gain K nor an FIR response")


def write_fir_coefficients(resp: FirResponse, path: Path | str) -> Path:
    """Long-format dump: k, block, row, col, value; V is written with k = L + 1."""

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(["k", "block", "row", "col", "value"])
        for name, stack in (("phi_x", resp.phi_x), ("phi_u", resp.phi_u)):
            for k, block in enumerate(stack, start=1):
                for (i, j), value in np.ndenumerate(block):
                    writer.writerow([k, name, i, j, _number(value)])
        for (i, j), value in np.ndenumerate(resp.V):
            writer.writerow([resp.L + 1, "V", i, j, _number(value)])
    return path


def write_bootstrap_trials(result: BootstrapResult, path: Path | str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(["trial", "eps_A_tilde", "eps_B_tilde"])
        for trial, (a, b) in enumerate(zip(result.trial_eps_A, result.trial_eps_B)):
            writer.writerow([trial, _number(a), _number(b)])
    return path
