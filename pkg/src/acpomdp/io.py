"""Model files, JSON reports and CSV tables.

A model file is a JSON object::

    {"n_states": 2, "n_actions": 1, "n_obs": 2,
     "transitions": [[[0.9, 0.1], [0.2, 0.8]]],
     "observation": [[1, 0], [0, 1]],
     "cost": [[0.0], [1.0]],
     "metric": "discrete"}

``metric`` is ``"discrete"``, ``"line"`` (then ``points`` lists the state
locations) or an explicit distance matrix.  Floats in CSV output use 17
significant digits; JSON reports use the shortest round-trip form.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .errors import ShapeMismatch, ValidationError
from .model import FinitePomdp, validate

REQUIRED_KEYS = ("n_states", "n_actions", "n_obs", "transitions", "observation", "cost")


def model_from_dict(doc: dict, name: str = "") -> FinitePomdp:
    missing = [k for k in REQUIRED_KEYS if k not in doc]
    if missing:
        raise ValidationError(f"model file lacks keys {missing}")
    try:
        model = FinitePomdp.from_arrays(doc["transitions"], doc["observation"], doc["cost"],
                                        metric=doc.get("metric", "discrete"),
                                        points=doc.get("points"), name=doc.get("name", name))
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ValidationError):
            raise
        raise ShapeMismatch(f"malformed array in model file: {exc}") from None
    declared = (doc["n_states"], doc["n_actions"], doc["n_obs"])
    actual = (model.n_states, model.n_actions, model.n_obs)
    if tuple(int(v) for v in declared) != actual:
        raise ShapeMismatch(f"declared sizes {declared} do not match the arrays {actual}")
    return validate(model)


def model_to_dict(model: FinitePomdp) -> dict:
    doc = {"n_states": model.n_states, "n_actions": model.n_actions, "n_obs": model.n_obs,
           "transitions": model.transitions.tolist(), "observation": model.observation.tolist(),
           "cost": model.cost.tolist()}
    if model.metric_kind == "explicit":
        doc["metric"] = model.metric.tolist()
    else:
        doc["metric"] = model.metric_kind
        if model.metric_kind == "line":
            doc["points"] = np.asarray(model.points).tolist()
    if model.name:
        doc["name"] = model.name
    return doc


def load_model(path) -> FinitePomdp:
    path = Path(path)
    with path.open() as fh:
        doc = json.load(fh)
    return model_from_dict(doc, name=path.stem)


def save_model(model: FinitePomdp, path) -> None:
    write_report(path, model_to_dict(model))


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    return obj


def write_report(path, doc: dict) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(_plain(doc), indent=2, sort_keys=True) + "\n")
    return path


def fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return "%.17g" % v
    return str(v)


def write_csv(path, header, rows) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])
    return path


def read_csv(path):
    with Path(path).open(newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]


# ---------------------------------------------------------------------------
# Table writers


def write_trajectory(path, traj) -> Path:
    S = traj.beliefs.shape[1] if traj.beliefs.size else 0
    header = ["t", "state", "obs", "action", "cost"] + [f"z{i}" for i in range(S)]
    rows = []
    for t in range(len(traj.states)):
        last = t == len(traj.states) - 1
        row = [t, int(traj.states[t]), int(traj.observations[t]),
               "" if last else int(traj.actions[t]), "" if last else float(traj.stage_costs[t])]
        if S:
            row += [float(v) for v in traj.beliefs[t]]
        rows.append(row)
    return write_csv(path, header, rows)


def write_tv(path, tv) -> Path:
    return write_csv(path, ["t", "mean_tv"], [(t, float(v)) for t, v in enumerate(tv)])


def write_beta_trace(path, trace) -> Path:
    return write_csv(path, ["beta", "rho", "span_h"], [(float(b), r, s) for b, r, s in trace])


def write_qtable(path, qtable, state_labels=None) -> Path:
    """QTable CSV plus a JSON sidecar that decodes the state ids."""
    n, A = qtable.values.shape
    rows = [(s, u, float(qtable.values[s, u]), int(qtable.visit_counts[s, u]))
            for s in range(n) for u in range(A)]
    out = write_csv(path, ["state", "action", "value", "visits"], rows)
    side = {"state_kind": qtable.state_kind, "n_states": n, "n_actions": A}
    if state_labels is not None:
        side["states"] = state_labels
    write_report(Path(path).with_suffix(".states.json"), side)
    return out
