"""Group-relative advantages, the clipped surrogate with KL penalty, and the two-stage curriculum sampler.

Only the scalar math lives here. Gradients, parameter updates and adapter
application belong to an external trainer that consumes these numbers.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Iterator, Sequence

from ._seeding import rng_for
from .errors import ConfigurationError, DomainError
from .records import STRUCTURED_TYPES, QaRecord

log = logging.getLogger(__name__)

KL_ESTIMATORS = ("k3", "linear")


@dataclass(frozen=True)
class GrpoConfig:
    group_size: int = 4
    clip_epsilon: float = 0.2
    kl_beta: float = 0.01
    kl_estimator: str = "k3"
    w_acc: float = 0.9
    w_fmt: float = 0.1
    max_completion_tokens: int = 256
    # carried for the external trainer; unused by the math here
    learning_rate: float = 5e-6
    warmup_ratio: float = 0.05
    epochs: int = 2
    global_batch_size: int = 32
    max_grad_norm: float = 10.0
    lora_rank: int = 16
    lora_alpha: int = 32
    lora_dropout: float = 0.05

    def __post_init__(self):
        if self.group_size < 2:
            raise ConfigurationError(f"group_size must be >= 2, got {self.group_size}")
        if not self.clip_epsilon > 0:
            raise ConfigurationError(f"clip_epsilon must be > 0, got {self.clip_epsilon}")
        if self.kl_beta < 0:
            raise ConfigurationError(f"kl_beta must be >= 0, got {self.kl_beta}")
        if self.kl_estimator not in KL_ESTIMATORS:
            raise ConfigurationError(f"kl_estimator must be one of {KL_ESTIMATORS}")

    @classmethod
    def from_dict(cls, d: dict) -> "GrpoConfig":
        d = dict(d)
        preset = d.pop("preset", None)
        base = PRESETS[preset] if preset else cls()
        try:
            return replace(base, **d)
        except TypeError as exc:
            raise ConfigurationError(f"bad grpo config: {exc}") from None


PRESETS = {
    "aggressive": GrpoConfig(),
    "conservative": GrpoConfig(learning_rate=2.5e-6),
}


@dataclass
class Response:
    reward: float
    token_logp_new: list[float]
    token_logp_old: list[float]
    token_logp_ref: list[float]


@dataclass
class RolloutGroup:
    prompt_id: str
    responses: list[Response] = field(default_factory=list)

    def validate(self, group_size: int | None = None) -> None:
        if group_size is not None and len(self.responses) != group_size:
            raise DomainError(f"{self.prompt_id}: expected {group_size} responses, got {len(self.responses)}")
        if len(self.responses) < 2:
            raise DomainError(f"{self.prompt_id}: a group needs at least 2 responses")
        for k, r in enumerate(self.responses):
            n = len(r.token_logp_new)
            if n < 1 or len(r.token_logp_old) != n or len(r.token_logp_ref) != n:
                raise DomainError(f"{self.prompt_id}: response {k} log-prob lists must share one length >= 1")
            values = [r.reward, *r.token_logp_new, *r.token_logp_old, *r.token_logp_ref]
            if not all(math.isfinite(v) for v in values):
                raise DomainError(f"{self.prompt_id}: response {k} has non-finite values")

    @classmethod
    def from_dict(cls, d: dict) -> "RolloutGroup":
        try:
            return cls(str(d["prompt_id"]), [
                Response(float(r["reward"]), [float(x) for x in r["token_logp_new"]],
                         [float(x) for x in r["token_logp_old"]], [float(x) for x in r["token_logp_ref"]])
                for r in d["responses"]])
        except (KeyError, TypeError, ValueError) as exc:
            raise DomainError(f"{d.get('prompt_id', '?')}: malformed rollout group ({exc})") from None


def group_advantages(rewards: Sequence[float]) -> list[float]:
    """Each reward minus the group mean."""
    if len(rewards) < 2:
        raise DomainError(f"a group needs at least 2 rewards, got {len(rewards)}")
    mean = math.fsum(rewards) / len(rewards)
    return [r - mean for r in rewards]


def _check_lengths(a: Sequence[float], b: Sequence[float]) -> None:
    if len(a) != len(b):
        raise DomainError(f"per-token lists differ in length: {len(a)} vs {len(b)}")
    if not a:
        raise DomainError("per-token lists are empty")


def clipped_surrogate(logp_new: Sequence[float], logp_old: Sequence[float], advantage: float,
                      eps: float = 0.2) -> float:
    """Token mean of min(rho * A, clip(rho, 1 - eps, 1 + eps) * A), maximization convention."""
    _check_lengths(logp_new, logp_old)
    terms = []
    for n, o in zip(logp_new, logp_old):
        rho = math.exp(n - o)
        terms.append(min(rho * advantage, min(max(rho, 1 - eps), 1 + eps) * advantage))
    return sum(terms) / len(terms)


def kl_penalty(logp_new: Sequence[float], logp_ref: Sequence[float], estimator: str = "k3") -> float:
    """Token-averaged KL estimate of the new policy from the reference.

    ``k3`` is exp(x) - x - 1 with x = ref - new, nonnegative per token.
    ``linear`` is the plain mean of new - ref, which can be negative.
    """
    _check_lengths(logp_new, logp_ref)
    if estimator == "linear":
        return math.fsum(n - r for n, r in zip(logp_new, logp_ref)) / len(logp_new)
    if estimator != "k3":
        raise ConfigurationError(f"unknown KL estimator {estimator!r}")
    # expm1 keeps precision for small gaps; clamp absorbs the last-ulp rounding below 0
    terms = [max(0.0, math.expm1(r - n) - (r - n)) for n, r in zip(logp_new, logp_ref)]
    return math.fsum(terms) / len(terms)


def total_objective(group: RolloutGroup, cfg: GrpoConfig = GrpoConfig()) -> dict:
    group.validate(cfg.group_size)
    adv = group_advantages([r.reward for r in group.responses])
    surr = [clipped_surrogate(r.token_logp_new, r.token_logp_old, a, cfg.clip_epsilon)
            for r, a in zip(group.responses, adv)]
    kls = [kl_penalty(r.token_logp_new, r.token_logp_ref, cfg.kl_estimator) for r in group.responses]
    surrogate = sum(surr) / len(surr)
    kl = sum(kls) / len(kls)
    return {"prompt_id": group.prompt_id, "advantages": adv, "surrogate": surrogate, "kl": kl,
            "objective": surrogate - cfg.kl_beta * kl}


# -- curriculum ---------------------------------------------------------------

STAGES = ("structured", "balanced")


@dataclass(frozen=True)
class CurriculumStage:
    stage: str
    records: tuple[QaRecord, ...]
    seed: int = 0

    def __post_init__(self):
        if self.stage not in STAGES:
            raise ConfigurationError(f"stage must be one of {STAGES}, got {self.stage!r}")
        object.__setattr__(self, "records", tuple(self.records))

    def structured_ids(self) -> list[str]:
        return [r.id for r in self.records if r.question_type in STRUCTURED_TYPES]

    def open_ended_ids(self) -> list[str]:
        return [r.id for r in self.records if r.question_type == "open_ended"]


def epoch_ids(stage: CurriculumStage, epoch: int) -> list[str]:
    """Shuffled record ids for one epoch of a stage."""
    rng = rng_for(stage.seed, "curriculum", stage.stage, epoch)
    structured = stage.structured_ids()
    if stage.stage == "structured":
        ids = structured
    else:
        oe = stage.open_ended_ids()
        if not oe:
            raise ConfigurationError("balanced stage needs at least one open-ended record")
        k = min(len(oe), len(structured))
        if k < len(oe):
            log.warning("balanced stage: only %d structured records for %d open-ended", k, len(oe))
        pick = sorted(rng.choice(len(structured), size=k, replace=False).tolist())
        ids = oe + [structured[i] for i in pick]
    return [ids[i] for i in rng.permutation(len(ids))]


def curriculum_batches(stage: CurriculumStage, batch_size: int, epochs: int = 1) -> Iterator[dict]:
    """Yield ``{stage, epoch, batch, ids}`` manifests; the last batch of an epoch may be short."""
    if batch_size < 1 or epochs < 0:
        raise ConfigurationError("batch_size must be >= 1 and epochs >= 0")
    for epoch in range(epochs):
        ids = epoch_ids(stage, epoch)
        for b, start in enumerate(range(0, len(ids), batch_size)):
            yield {"stage": stage.stage, "epoch": epoch, "batch": b, "ids": ids[start:start + batch_size]}
