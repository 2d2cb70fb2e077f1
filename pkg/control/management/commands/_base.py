from __future__ import annotations

import json
from functools import wraps
from pathlib import Path

from django.core.exceptions import ValidationError
from django.core.management.base import CommandError

from ...conf import toolkit_setting
from ...exceptions import CoarseIdError
from ...serializers import json_safe, read_json
from ...services.lti import CostWeights, LinearSystem, laplacian_example
from ...services.experiments import LAPLACIAN_EXAMPLE


def toolkit_errors(handle):
    """Turn toolkit, validation and I/O failures into ``CommandError`` with a readable message."""

    @wraps(handle)
    def _wrapped(self, *args, **options):
        try:
            return handle(self, *args, **options)
        except CoarseIdError as exc:
            raise CommandError(f"{type(exc).__name__}: {exc}") from exc
        except ValidationError as exc:
            raise CommandError("; ".join(exc.messages)) from exc
        except OSError as exc:
            target = exc.filename or ""
            raise CommandError(f"{target}: {exc.strerror or exc}" if target else str(exc)) from exc

    return _wrapped


def output_dir(option: str | None) -> Path:
    directory = Path(option) if option else Path(toolkit_setting("OUTPUT_DIR"))
    directory.mkdir(parents=True, exist_ok=True)
    return directory


def load_system(value: str | None) -> LinearSystem:
    """``laplacian-example`` (the default) or a JSON file holding A and B."""

    if value in (None, LAPLACIAN_EXAMPLE):
        return laplacian_example()[0]
    payload = read_json(value)
    if "A" not in payload or "B" not in payload:
        raise ValidationError(f"{value} must hold matrices A and B")
    return LinearSystem.from_dict(payload)


def load_cost(value: str | None, system: LinearSystem, *, example: bool = False) -> CostWeights:
    if value is None:
        return laplacian_example()[1] if example else CostWeights.identity(system.n, system.p)
    payload = read_json(value)
    cost = CostWeights(payload["Q"], payload["R"])
    cost.check_compatible(system)
    return cost


def emit_json(command, payload: dict) -> None:
    command.stdout.write(json.dumps(json_safe(payload), indent=2, sort_keys=True, default=str))


def add_output_argument(parser) -> None:
    parser.add_argument("--output-dir", help="Directory for written files (defaults to COARSE_ID_OUTPUT_DIR).")
