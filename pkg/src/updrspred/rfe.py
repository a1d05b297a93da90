"""Recursive feature elimination driven by the forest's depth ranking.

Each round refits the forest on the surviving columns, ranks them, and
drops exactly the single least-important feature until ``k`` survive.
Columns can be protected (they are ranked but never dropped), which the
pipeline uses to pin must-keep regressors.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ParameterError
from .forest import FeatureRanking, ForestParams, feature_importance, fit_forest
from .linalg import RandomSource


@dataclass
class RfeRound:
    surviving: tuple  # original column indices entering the round
    importance: np.ndarray  # aligned with `surviving`
    removed: int  # original column index dropped this round


@dataclass
class RfeResult:
    selected: tuple  # original indices kept, ascending
    elimination_order: tuple  # original indices in removal order
    rounds: list = field(default_factory=list)

    def per_round_importance(self):
        return [
            {int(f): float(s) for f, s in zip(r.surviving, r.importance)}
            for r in self.rounds
        ]

    def to_report(self, feature_names=None) -> str:
        """Human-readable elimination history."""
        def label(idx):
            return feature_names[idx] if feature_names else f"feature {idx}"

        lines = [f"selected ({len(self.selected)}): " + ", ".join(label(i) for i in self.selected)]
        for round_no, r in enumerate(self.rounds, start=1):
            scores = ", ".join(
                f"{label(f)}={s:.4f}" for f, s in zip(r.surviving, r.importance)
            )
            lines.append(f"round {round_no}: removed {label(r.removed)} [{scores}]")
        return "\n".join(lines) + "\n"

    def to_json(self, feature_names=None) -> str:
        doc = {
            "version": 1,
            "selected": [int(i) for i in self.selected],
            "elimination_order": [int(i) for i in self.elimination_order],
            "per_round_importance": self.per_round_importance(),
        }
        if feature_names:
            doc["selected_names"] = [feature_names[i] for i in self.selected]
            doc["eliminated_names"] = [feature_names[i] for i in self.elimination_order]
        return json.dumps(doc, indent=2, sort_keys=True)


def rfe_select(
    X: np.ndarray,
    y: np.ndarray,
    k: int,
    params: ForestParams,
    rng: RandomSource,
    protected=(),
) -> RfeResult:
    """Keep the ``k`` most useful columns of X by iterated elimination.

    Exactly ``d - k`` rounds run; each uses a freshly derived seed and
    removes the feature with the lowest importance (ties fall to the
    highest original column index). Protected columns count toward ``k``
    but are never removed.
    """
    X = np.asarray(X, dtype=np.float64)
    d = X.shape[1]
    if not 1 <= k <= d:
        raise ParameterError(f"k must lie in 1..{d}, got {k}")
    protected = {int(p) for p in protected}
    if any(not 0 <= p < d for p in protected):
        raise ParameterError(f"protected indices out of range for d={d}")
    if len(protected) > k:
        raise ParameterError(f"{len(protected)} protected features cannot fit in k={k}")

    surviving = list(range(d))
    eliminated = []
    rounds = []
    while len(surviving) > k:
        round_rng = rng.spawn()
        forest = fit_forest(X[:, surviving], y, params, round_rng)
        ranking: FeatureRanking = feature_importance(forest)
        removable = [
            (ranking.importance[j], -surviving[j], j)
            for j in range(len(surviving))
            if surviving[j] not in protected
        ]
        if not removable:
            raise ParameterError("no removable features left before reaching k")
        _, _, drop_local = min(removable)
        dropped = surviving[drop_local]
        rounds.append(
            RfeRound(
                surviving=tuple(surviving),
                importance=ranking.importance.copy(),
                removed=dropped,
            )
        )
        eliminated.append(dropped)
        surviving.pop(drop_local)

    return RfeResult(
        selected=tuple(sorted(surviving)),
        elimination_order=tuple(eliminated),
        rounds=rounds,
    )
