"""Trained-policy container, collapse detection, and exposure-mask selection.

The policy file is a versioned JSON container: layer shapes, row-major
float64 weight bytes (base64), training metadata, and a content hash. The
loader rejects shape mismatches and hash drift. Mask selection is read-only
over an immutable snapshot; reloads swap the snapshot atomically.
"""

from __future__ import annotations

import base64
import hashlib
import json
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from agentwarden.domain import TaskType, ToolMask, TrustLevel
from agentwarden.governor import ConfigError, FallbackTable, ScopeSource, min_tool_set
from agentwarden.policy.mdp import (
    EXEC_TRUST_THRESHOLD,
    StateVector,
    apply_hard_constraints,
)
from agentwarden.policy.network import PARAM_SHAPES, policy_forward

FORMAT_VERSION = "awp-1"


class PolicyLoadError(ConfigError):
    """Policy file missing, malformed, wrong shapes, or hash mismatch."""


@dataclass
class Policy:
    """An exposure policy: network weights plus training provenance."""

    params: dict[str, np.ndarray]
    version: str = FORMAT_VERSION
    trained_steps: int = 0
    seed: int = 0
    collapse_flag: bool = False

    def deterministic_mask(self, state: StateVector) -> ToolMask:
        """Raw network decision: each Bernoulli thresholded at 0.5."""
        logits, _ = policy_forward(self.params, state.to_array()[None, :])
        bits = 0
        for i, z in enumerate(logits[0]):
            if z > 0.0:
                bits |= 1 << i
        return ToolMask(bits)

    def content_hash(self) -> str:
        digest = hashlib.sha256()
        digest.update(f"{self.version}|{self.trained_steps}|{self.seed}".encode())
        for name in sorted(self.params):
            digest.update(name.encode())
            digest.update(np.ascontiguousarray(self.params[name], dtype="<f8").tobytes())
        return digest.hexdigest()


def save_policy(policy: Policy, path: str) -> str:
    """Write the policy container; returns its content hash."""
    layers = {
        name: {
            "shape": list(array.shape),
            "dtype": "float64",
            "data": base64.b64encode(
                np.ascontiguousarray(array, dtype="<f8").tobytes()
            ).decode("ascii"),
        }
        for name, array in sorted(policy.params.items())
    }
    content_hash = policy.content_hash()
    doc = {
        "format": FORMAT_VERSION,
        "version": policy.version,
        "trained_steps": policy.trained_steps,
        "seed": policy.seed,
        "collapse_flag": policy.collapse_flag,
        "content_hash": content_hash,
        "layers": layers,
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, sort_keys=True, separators=(",", ":"))
        fh.write("\n")
    return content_hash


def load_policy(path: str) -> Policy:
    """Load and verify a policy container.

    Raises:
        PolicyLoadError: unreadable file, unknown format, shape mismatch
        against the fixed architecture, or content-hash drift.
    """
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise PolicyLoadError(f"cannot load policy file {path}: {exc}") from exc
    if doc.get("format") != FORMAT_VERSION:
        raise PolicyLoadError(f"unsupported policy format: {doc.get('format')!r}")
    layers = doc.get("layers", {})
    if set(layers) != set(PARAM_SHAPES):
        missing = set(PARAM_SHAPES) ^ set(layers)
        raise PolicyLoadError(f"policy layers do not match the architecture: {sorted(missing)}")
    params: dict[str, np.ndarray] = {}
    for name, spec in layers.items():
        expected = PARAM_SHAPES[name]
        if tuple(spec.get("shape", ())) != expected:
            raise PolicyLoadError(
                f"layer {name} has shape {spec.get('shape')}, expected {list(expected)}"
            )
        raw = base64.b64decode(spec["data"])
        array = np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(expected)
        params[name] = array.copy()
    policy = Policy(
        params=params,
        version=str(doc.get("version", FORMAT_VERSION)),
        trained_steps=int(doc.get("trained_steps", 0)),
        seed=int(doc.get("seed", 0)),
        collapse_flag=bool(doc.get("collapse_flag", False)),
    )
    if policy.content_hash() != doc.get("content_hash"):
        raise PolicyLoadError(f"policy file {path} failed its content-hash check")
    return policy


def state_grid() -> list[StateVector]:
    """All 36 (task, trust) evaluation states, in (task, trust) order."""
    return [
        StateVector(task=task, trust=TrustLevel(raw))
        for task in TaskType
        for raw in range(6)
    ]


def detect_collapse(policy: Policy) -> bool:
    """Degenerate-policy detector over the full state grid.

    Collapse: the union of exposed tools across all states has at most one
    member, or every state yields one identical mask of at most two tools.
    Evaluated on the raw (pre-constraint) deterministic masks, since collapse
    is a property of the network itself.
    """
    masks = [policy.deterministic_mask(state) for state in state_grid()]
    union = 0
    for mask in masks:
        union |= mask.bits
    if ToolMask(union).popcount() <= 1:
        return True
    first = masks[0]
    if all(m == first for m in masks) and first.popcount() <= 2:
        return True
    return False


def mean_grid_ser(policy: Policy, exec_threshold: Fraction = EXEC_TRUST_THRESHOLD) -> Fraction:
    """Mean noise-free SER of the policy's constrained masks over the grid.

    Per state: the deterministic mask after hard constraints; the simulated
    agent invokes needed ∩ mask; empty masks score 0.
    """
    total = Fraction(0)
    states = state_grid()
    for state in states:
        mask = apply_hard_constraints(
            policy.deterministic_mask(state), state.trust, exec_threshold
        )
        exposed = mask.popcount()
        if exposed == 0:
            continue
        hits = sum(1 for tool in min_tool_set(state.task) if tool in mask)
        total += Fraction(hits, exposed)
    return total / len(states)


class PolicyEngine:
    """Hybrid mask selector: learned policy first, static fallback otherwise."""

    def __init__(
        self,
        policy: Policy | None = None,
        fallback: FallbackTable | None = None,
        use_default_fallback: bool = True,
    ) -> None:
        if fallback is None and use_default_fallback:
            fallback = FallbackTable.default()
        self.policy = policy
        self.fallback = fallback

    @classmethod
    def from_files(
        cls, policy_path: str | None = None, fallback: FallbackTable | None = None
    ) -> PolicyEngine:
        policy = None
        if policy_path is not None:
            policy = load_policy(policy_path)
            policy.collapse_flag = detect_collapse(policy)
        return cls(policy=policy, fallback=fallback)

    def _exec_threshold(self) -> Fraction:
        # A fallback config may only tighten the exec gate, never loosen it.
        configured = Fraction(self.fallback.min_trust_for_exec, 5) if self.fallback else Fraction(0)
        return max(EXEC_TRUST_THRESHOLD, configured)

    def select_mask(self, task: TaskType, trust: TrustLevel) -> tuple[ToolMask, str]:
        """Constrained exposure mask plus its source.

        A healthy learned policy wins; a collapsed or absent policy falls
        back to the static per-task table. With neither, scoping is refused.
        """
        threshold = self._exec_threshold()
        if self.policy is not None and not self.policy.collapse_flag:
            raw = self.policy.deterministic_mask(StateVector(task=task, trust=trust))
            return (
                apply_hard_constraints(raw, trust, threshold),
                ScopeSource.LEARNED_POLICY,
            )
        if self.fallback is not None:
            mask = apply_hard_constraints(self.fallback.mask_for(task), trust, threshold)
            return mask, ScopeSource.YAML_FALLBACK
        raise ConfigError("no learned policy and no fallback table configured")
