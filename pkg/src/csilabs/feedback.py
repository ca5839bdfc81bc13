"""Multiuser feedback selection: K UEs contending for N uplink resources.

Four schedulers decide which UEs deliver their quantized updates each round:

* probabilistic: a UE whose prediction error exceeds the threshold attempts
  with probability exp(err)/(1+exp(err)) on a uniformly chosen resource;
  two attempts on one resource collide and both are lost for the round.
* error bin: one resource is spent on a contention slot of Q mini-slots;
  errors map to bins (high error -> early mini-slot), sole signalers win and
  are admitted to the remaining data slots highest-error-first, excess
  winners are dropped, mini-slot ties collide at a cost of one bit each.
* deterministic: everyone transmits at once, so with two or more UEs nothing
  ever gets through and the BS stays on open-loop prediction.
* periodic: round-robin raw compressed reporting without any prediction;
  between turns the BS holds the last delivered value.

Non-delivering UEs are acquired open loop (the BS keeps its own prediction).
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field, replace

import numpy as np

from .channel import ARTraceConfig, generate_ar_trace, normalize_trace
from .metrics import cosine_similarity, nmse, precoding_gain
from .predictors import TrainConfig
from .protocol import (
    LoopPolicy,
    QuantizedUpdate,
    compute_update,
    encode_feedback,
    fit_pf,
    predict_with_pf,
    retrieve_csi,
    _cp_predict_next,
    _train_channel_predictor,
)
from .quantizer import QuantizerConfig, calibrate_clip_range, overhead_bits, quantize

__all__ = [
    "Decision",
    "ContentionConfig",
    "ResourceGrid",
    "UEState",
    "RoundOutcome",
    "compute_delta",
    "glauber_probability",
    "probabilistic_round",
    "error_bin_round",
    "deterministic_round",
    "periodic_round",
    "MultiuserScenario",
    "MultiuserResult",
    "build_ensemble",
    "simulate_multiuser",
]


def compute_delta(predicted_ue, estimated) -> float:
    """Mean complex modulus of the prediction error across antennas."""
    pred = np.asarray(predicted_ue, dtype=np.complex128)
    est = np.asarray(estimated, dtype=np.complex128)
    if pred.shape != est.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {est.shape}")
    return float(np.mean(np.abs(pred - est)))


def glauber_probability(delta: float) -> float:
    """Attempt probability exp(d)/(1+exp(d)), overflow-safe for large errors."""
    if delta < 0:
        raise ValueError("prediction error must be >= 0")
    return float(1.0 / (1.0 + np.exp(-delta)))


class Decision(enum.Enum):
    IDLE = "idle"
    ATTEMPTED = "attempted"
    WON = "won"
    COLLIDED = "collided"
    DROPPED = "dropped"


@dataclass(frozen=True)
class ContentionConfig:
    """Contention slot layout: Q mini-slots, one per error bin."""

    mini_slots: int = 10
    delta_min: float = 0.0
    delta_max: float = 1.0
    delta_diff: float = 0.10

    def __post_init__(self):
        if self.mini_slots < 1:
            raise ValueError("mini_slots must be >= 1")
        if not (self.delta_max > self.delta_min):
            raise ValueError("delta_max must exceed delta_min")
        if not (self.delta_diff > 0):
            raise ValueError("delta_diff must be positive")

    @property
    def bins(self) -> int:
        span = self.delta_max - self.delta_min
        count = int(round(span / self.delta_diff))
        if abs(count * self.delta_diff - span) > 1e-9:
            raise ValueError("bin spacing must evenly divide the error window")
        return count

    def bin_index(self, delta: float) -> int:
        """1-based bin, clamped into [1, bins]."""
        raw = int(np.ceil((delta - self.delta_min) / self.delta_diff))
        return int(np.clip(raw, 1, self.bins))

    def mini_slot(self, delta: float) -> int:
        """1-based mini-slot: highest bin -> slot 1, lowest bin -> slot Q."""
        return self.mini_slots + 1 - self.bin_index(delta)


@dataclass(frozen=True)
class ResourceGrid:
    """Per-round uplink layout: N data slots plus an optional contention slot."""

    data_slots: int
    contention: ContentionConfig | None = None

    def __post_init__(self):
        if self.data_slots < 1:
            raise ValueError("data_slots must be >= 1")
        if self.contention is not None and self.contention.mini_slots != self.contention.bins:
            raise ValueError(
                f"mini_slots ({self.contention.mini_slots}) must equal the bin count "
                f"({self.contention.bins})"
            )


@dataclass
class UEState:
    """One UE's view entering a round."""

    ue_id: int
    delta: float
    predicted_bs: np.ndarray
    estimated: np.ndarray
    pending: QuantizedUpdate
    decision: Decision = Decision.IDLE

    def __post_init__(self):
        if self.delta < 0:
            raise ValueError("delta must be >= 0")


@dataclass
class RoundOutcome:
    """Bookkeeping for one feedback round."""

    winners: list[int] = field(default_factory=list)
    collisions: list[tuple[int, list[int]]] = field(default_factory=list)
    dropped: list[int] = field(default_factory=list)
    attempts: int = 0
    acquired: dict[int, np.ndarray] = field(default_factory=dict)
    provenance: dict[int, str] = field(default_factory=dict)
    bits: int = 0

    def deliver(self, state: UEState) -> None:
        state.decision = Decision.WON
        self.winners.append(state.ue_id)
        acq = retrieve_csi(state.predicted_bs, state.pending)
        self.acquired[state.ue_id] = acq.vector
        self.provenance[state.ue_id] = acq.provenance.value
        self.bits += state.pending.bits or 0

    def open_loop(self, state: UEState) -> None:
        self.acquired[state.ue_id] = np.array(state.predicted_bs, dtype=np.complex128)
        self.provenance[state.ue_id] = "open_loop"


def probabilistic_round(states: list[UEState], n_resources: int, threshold: float,
                        rng: np.random.Generator) -> RoundOutcome:
    """Glauber-gated random resource selection; singleton resources deliver."""
    if threshold < 0:
        raise ValueError("threshold must be >= 0")
    if n_resources < 1:
        raise ValueError("need at least one resource")
    outcome = RoundOutcome()
    choices: dict[int, list[UEState]] = {}
    for state in states:
        state.decision = Decision.IDLE
        if state.delta > threshold and rng.random() < glauber_probability(state.delta):
            resource = int(rng.integers(n_resources))
            state.decision = Decision.ATTEMPTED
            choices.setdefault(resource, []).append(state)
            outcome.attempts += 1
    for resource, contenders in sorted(choices.items()):
        if len(contenders) == 1:
            outcome.deliver(contenders[0])
        else:
            for state in contenders:
                state.decision = Decision.COLLIDED
            outcome.collisions.append((resource, [s.ue_id for s in contenders]))
    for state in states:
        if state.decision is not Decision.WON:
            outcome.open_loop(state)
    return outcome


def error_bin_round(states: list[UEState], grid: ResourceGrid, threshold: float,
                    data_slots: int | None = None) -> RoundOutcome:
    """Contention by error bin, then data slots granted highest error first."""
    if grid.contention is None:
        raise ValueError("error-bin scheduling requires a contention slot configuration")
    slots = grid.data_slots if data_slots is None else data_slots
    if slots < 1:
        raise ValueError("need at least one data slot")
    outcome = RoundOutcome()
    signals: dict[int, list[UEState]] = {}
    for state in states:
        state.decision = Decision.IDLE
        if state.delta > threshold:
            mini = grid.contention.mini_slot(state.delta)
            state.decision = Decision.ATTEMPTED
            signals.setdefault(mini, []).append(state)
            outcome.attempts += 1
            outcome.bits += 1  # one contention bit per signaling UE
    contention_winners = []
    for mini in sorted(signals):
        contenders = signals[mini]
        if len(contenders) == 1:
            contention_winners.append((mini, contenders[0]))
        else:
            for state in contenders:
                state.decision = Decision.COLLIDED
            outcome.collisions.append((mini, [s.ue_id for s in contenders]))
    for rank, (_, state) in enumerate(contention_winners):
        if rank < slots:
            outcome.deliver(state)
        else:
            state.decision = Decision.DROPPED
            outcome.dropped.append(state.ue_id)
    for state in states:
        if state.decision is not Decision.WON:
            outcome.open_loop(state)
    return outcome


def deterministic_round(states: list[UEState]) -> RoundOutcome:
    """Everyone transmits simultaneously: total collision unless K == 1."""
    outcome = RoundOutcome()
    outcome.attempts = len(states)
    if len(states) == 1:
        outcome.deliver(states[0])
        return outcome
    if states:
        for state in states:
            state.decision = Decision.COLLIDED
        outcome.collisions.append((0, [s.ue_id for s in states]))
    for state in states:
        if state.decision is not Decision.WON:
            outcome.open_loop(state)
    return outcome


def periodic_round(states: list[UEState], n_resources: int, round_index: int,
                   quantizer: QuantizerConfig) -> RoundOutcome:
    """Round-robin raw reporting: the scheduled id-group delivers f_Q of its
    estimate; everyone else is left untouched (the BS holds its last value,
    which the caller keeps in ``predicted_bs``)."""
    if n_resources < 1:
        raise ValueError("need at least one resource")
    outcome = RoundOutcome()
    ordered = sorted(states, key=lambda s: s.ue_id)
    groups = max(1, (len(ordered) + n_resources - 1) // n_resources)
    active = round_index % groups
    for position, state in enumerate(ordered):
        if position // n_resources == active:
            state.decision = Decision.WON
            outcome.winners.append(state.ue_id)
            outcome.attempts += 1
            recon = quantize(state.estimated, quantizer).reconstruct()
            outcome.acquired[state.ue_id] = recon
            outcome.provenance[state.ue_id] = "baseline_without_ml"
            if not quantizer.is_lossless:
                outcome.bits += overhead_bits(quantizer, state.estimated.shape[0])
        else:
            state.decision = Decision.IDLE
            outcome.acquired[state.ue_id] = np.array(state.predicted_bs, dtype=np.complex128)
            outcome.provenance[state.ue_id] = "held"
    return outcome


# --- end-to-end multiuser simulation -----------------------------------------

SCHEMES = ("probabilistic", "error_bin", "deterministic", "periodic")


@dataclass(frozen=True)
class MultiuserScenario:
    """Everything needed for one seeded multiuser run."""

    num_ues: int = 30
    resources: int = 10
    scheme: str = "probabilistic"
    threshold: float = 0.3
    rounds: int = 40
    bits: int | None = 2
    round_stride: int = 1
    channel: ARTraceConfig = field(default_factory=lambda: ARTraceConfig(
        antennas=16, length=0, coefficients=(0.998,), innovation_stddev=1.0))
    loop: LoopPolicy = field(default_factory=lambda: LoopPolicy(
        predictor_kind="linear_ar", lags=2, fit_window=128,
        train=TrainConfig(epochs=20)))
    contention: ContentionConfig = field(default_factory=ContentionConfig)
    seed: int = 0

    def __post_init__(self):
        if self.num_ues < 1:
            raise ValueError("num_ues must be >= 1")
        if self.resources < 1:
            raise ValueError("resources must be >= 1")
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}")
        if self.threshold < 0:
            raise ValueError("threshold must be >= 0")
        if self.rounds < 0:
            raise ValueError("rounds must be >= 0")
        if self.round_stride < 1:
            raise ValueError("round_stride must be >= 1")


@dataclass
class UEContext:
    """Per-UE simulation state shared across rounds (and across schemes)."""

    ue_id: int
    stream: np.ndarray  # (rounds+1, M) round-spaced true channel
    pf: object
    q_update: QuantizerConfig
    q_channel: QuantizerConfig


@dataclass
class RoundRecord:
    round_index: int
    scheme: str
    threshold: float
    attempts: int
    collisions: int
    winners: int
    bits: int
    nmse: float

    def to_json(self) -> str:
        return json.dumps(self.__dict__)


@dataclass
class MultiuserResult:
    scheme: str
    threshold: float
    records: list[RoundRecord]
    nmse: float
    cosine: float
    precoding_gain: float
    mean_bits: float

    def to_jsonl(self) -> str:
        return "\n".join(r.to_json() for r in self.records)


def build_ensemble(scenario: MultiuserScenario) -> list[UEContext]:
    """Generate traces and fit each UE's transition matrix and codecs.

    The ensemble depends only on (scenario.channel, loop, seed), so one
    ensemble can be reused across schemes and thresholds.
    """
    stride = scenario.round_stride
    loop = scenario.loop
    boot_rounds = loop.fit_window
    train_rounds = max(3 * loop.lags + 8, 40)
    need = (train_rounds + boot_rounds + scenario.rounds + 1) * stride
    seeds = np.random.SeedSequence(scenario.seed).spawn(scenario.num_ues)
    contexts = []
    for k in range(scenario.num_ues):
        cfg = replace(scenario.channel, length=need,
                      seed=int(seeds[k].generate_state(1)[0]))
        full = normalize_trace(generate_ar_trace(cfg, ue_id=k)).samples[::stride]
        train_seg = full[:train_rounds]
        model = _train_channel_predictor(train_seg, loop, seed=k)
        q_channel = QuantizerConfig(bits=scenario.bits,
                                    clip_range=calibrate_clip_range(train_seg, loop.clip_factor))
        fit_start = train_rounds
        half = boot_rounds // 2
        predicted, reported = [], []
        for ell in range(fit_start, fit_start + half):
            predicted.append(_cp_predict_next(model, full[ell - loop.lags : ell]))
            reported.append(quantize(full[ell - 1], q_channel).reconstruct())
        pf = fit_pf(np.asarray(predicted), np.asarray(reported))
        probe = range(fit_start + half, fit_start + boot_rounds)
        residuals = np.asarray([pf.matrix @ full[i - 1] - full[i] for i in probe])
        q_update = QuantizerConfig(bits=scenario.bits,
                                   clip_range=calibrate_clip_range(residuals, loop.clip_factor))
        stream = full[fit_start + boot_rounds - 1 :][: scenario.rounds + 1]
        contexts.append(UEContext(ue_id=k, stream=stream, pf=pf,
                                  q_update=q_update, q_channel=q_channel))
    return contexts


def simulate_multiuser(scenario: MultiuserScenario,
                       ensemble: list[UEContext] | None = None) -> MultiuserResult:
    """Advance all UE loops round by round under the chosen scheduler."""
    if scenario.rounds == 0:
        return MultiuserResult(scheme=scenario.scheme, threshold=scenario.threshold,
                               records=[], nmse=float("nan"), cosine=float("nan"),
                               precoding_gain=float("nan"), mean_bits=float("nan"))
    contexts = ensemble if ensemble is not None else build_ensemble(scenario)
    rng = np.random.default_rng(np.random.SeedSequence(
        (scenario.seed, hash(scenario.scheme) & 0xFFFF, int(scenario.threshold * 1000))))
    grid = ResourceGrid(data_slots=max(1, scenario.resources - 1),
                        contention=scenario.contention)

    # BS-side shared state per UE: starts at the last bootstrap sample
    bs_state = {ctx.ue_id: np.array(ctx.stream[0]) for ctx in contexts}
    records = []
    nmse_vals, cos_vals, gain_vals = [], [], []
    for r in range(scenario.rounds):
        states = []
        for ctx in contexts:
            estimate = ctx.stream[r + 1]
            if scenario.scheme == "periodic":
                predicted = bs_state[ctx.ue_id]  # zero-order hold, no predictor
            else:
                predicted = predict_with_pf(ctx.pf, bs_state[ctx.ue_id])
            delta = compute_delta(predicted, estimate)
            update = compute_update(predicted, estimate, scenario.loop.suppression_tol)
            pending = encode_feedback(update, ctx.q_update)
            states.append(UEState(ue_id=ctx.ue_id, delta=delta, predicted_bs=predicted,
                                  estimated=estimate, pending=pending))
        if scenario.scheme == "probabilistic":
            outcome = probabilistic_round(states, scenario.resources, scenario.threshold, rng)
        elif scenario.scheme == "error_bin":
            outcome = error_bin_round(states, grid, scenario.threshold)
        elif scenario.scheme == "deterministic":
            outcome = deterministic_round(states)
        else:
            outcome = periodic_round(states, scenario.resources, r,
                                     contexts[0].q_channel)
        truth_matrix = np.stack([ctx.stream[r + 1] for ctx in contexts], axis=1)
        acquired_matrix = np.stack([outcome.acquired[ctx.ue_id] for ctx in contexts], axis=1)
        for ctx in contexts:
            bs_state[ctx.ue_id] = outcome.acquired[ctx.ue_id]
        round_nmse = nmse(acquired_matrix, truth_matrix)
        nmse_vals.append(round_nmse)
        cos_vals.append(cosine_similarity(acquired_matrix, truth_matrix))
        gain_vals.append(precoding_gain(acquired_matrix, truth_matrix))
        records.append(RoundRecord(round_index=r, scheme=scenario.scheme,
                                   threshold=scenario.threshold, attempts=outcome.attempts,
                                   collisions=len(outcome.collisions),
                                   winners=len(outcome.winners), bits=outcome.bits,
                                   nmse=round_nmse))
    return MultiuserResult(scheme=scenario.scheme, threshold=scenario.threshold,
                           records=records, nmse=float(np.mean(nmse_vals)),
                           cosine=float(np.mean(cos_vals)),
                           precoding_gain=float(np.mean(gain_vals)),
                           mean_bits=float(np.mean([rec.bits for rec in records])))
