"""Grouped in-batch video inference and its sliding-window baseline.

The grouped pipeline splits a video into windows of T frames where consecutive
windows share exactly one boundary frame, estimates all T-1 flows of a window
in one pass, and caches the frame-local encoder stage in a memory bank so each
unique frame is embedded once per video. The baseline slides a stride-1 window
of T frames, re-encoding every frame in every window and keeping only the
leading flow (plus the last window's remaining flows); both produce exactly
one flow per adjacent frame pair. A compute ledger counts the work for
comparison, which stays hardware-independent unlike wall-clock timing.
"""

import time
from dataclasses import dataclass, field

import torch


class ScheduleError(ValueError):
    pass


@dataclass
class FrameSequence:
    """One group's frames plus their global indices into the source video."""

    frames: list          # T tensors of (3, H, W) with values in [0, 1]
    frame_indices: tuple  # may repeat the final index when the tail is padded

    def __post_init__(self):
        if len(self.frames) < 2 or len(self.frames) != len(self.frame_indices):
            raise ValueError("a frame sequence needs >= 2 frames with matching indices")
        shape = self.frames[0].shape
        for f in self.frames:
            if f.shape != shape:
                raise ValueError(f"frame shapes differ: {tuple(f.shape)} vs {tuple(shape)}")
        if shape[-2] % 8 or shape[-1] % 8:
            raise ValueError(f"frame dims must divide by 8, got {tuple(shape[-2:])}")


@dataclass
class GroupSchedule:
    groups: list            # list of T-tuples of frame indices (tail replicated)
    kept: list              # per group, list of T-1 bools: True = real pair
    padded_tail: int        # number of replicated trailing slots

    @property
    def pairs(self):
        """Kept (k, k+1) pairs in order of production."""
        out = []
        for window, flags in zip(self.groups, self.kept):
            for j, keep in enumerate(flags):
                if keep:
                    out.append((window[j], window[j + 1]))
        return out


def schedule(num_frames: int, group_size: int) -> GroupSchedule:
    """Windows advance by T-1 so consecutive groups share one boundary frame.

    A short tail is filled by replicating the final frame; pairs touching a
    replicated slot are marked discarded. Every adjacent pair (k, k+1) of the
    video is produced exactly once.
    """
    if num_frames < 2:
        raise ScheduleError(f"need at least 2 frames, got {num_frames}")
    if group_size < 2:
        raise ScheduleError(f"group size must be >= 2, got {group_size}")
    groups, kept = [], []
    padded = 0
    start = 0
    while start < num_frames - 1:
        window = tuple(min(start + j, num_frames - 1) for j in range(group_size))
        flags = [window[j + 1] == window[j] + 1 for j in range(group_size - 1)]
        padded += sum(1 for j in range(group_size) if start + j > num_frames - 1)
        groups.append(window)
        kept.append(flags)
        start += group_size - 1
    return GroupSchedule(groups, kept, padded)


@dataclass
class ComputeLedger:
    """Monotone counters of the work done; reset only explicitly."""

    encoder_calls: int = 0
    volume_builds: int = 0
    decoder_iterations: int = 0
    temporal_layer_calls: int = 0

    def reset(self):
        self.encoder_calls = 0
        self.volume_builds = 0
        self.decoder_iterations = 0
        self.temporal_layer_calls = 0

    def snapshot(self) -> dict:
        return {
            "encoder_calls": self.encoder_calls,
            "volume_builds": self.volume_builds,
            "decoder_iterations": self.decoder_iterations,
            "temporal_layer_calls": self.temporal_layer_calls,
        }

    def to_text(self) -> str:
        return " ".join(f"{k}={v}" for k, v in self.snapshot().items())


@dataclass
class MemoryBank:
    """Frame index -> frame-local encoder output. Entries are bit-identical to
    recomputation because the cached stage never sees other frames."""

    cache: dict = field(default_factory=dict)
    hits: int = 0
    misses: int = 0

    def get(self, frame_index):
        entry = self.cache.get(frame_index)
        if entry is None:
            self.misses += 1
        else:
            self.hits += 1
        return entry

    def store(self, frame_index, tokens):
        self.cache[frame_index] = tokens

    def clear(self):
        self.cache.clear()


def _as_frame_list(frames):
    if isinstance(frames, torch.Tensor):
        if frames.dim() != 4 or frames.shape[1] != 3:
            raise ValueError(f"expected (N, 3, H, W) frames, got {tuple(frames.shape)}")
        return list(frames)
    return list(frames)


def run_group(seq: FrameSequence, model, bank, ledger, iterations=None):
    """Estimate the T-1 full-resolution flows of one group; returns (T-1, 2, H, W).

    Only cache-miss frames go through the frame-local encoder stage; the
    cross-frame stage always runs over the whole group.
    """
    tokens = []
    local = {}  # avoids embedding a replicated tail frame twice within the window
    for idx, frame in zip(seq.frame_indices, seq.frames):
        cached = bank.get(idx) if bank is not None else local.get(idx)
        if cached is None:
            cached = model.embed_frame(frame.unsqueeze(0))
            ledger.encoder_calls += 1
            if bank is not None:
                bank.store(idx, cached)
            else:
                local[idx] = cached
        tokens.append(cached)
    feats, state = model.encode_group(tokens)
    out = model.decode_group(feats, state, iterations, ledger)
    return out["flows"][-1][0]  # final iteration, batch dim squeezed


def run_video(frames, model, group_size, use_bank=True, iterations=None, ledger=None):
    """All N-1 adjacent-pair flows of a video via the grouped pipeline.

    Returns (flows, ledger, bank): flows is a list of (2, H, W) tensors where
    flows[k] maps frame k to k+1.
    """
    frames = _as_frame_list(frames)
    plan = schedule(len(frames), group_size)
    ledger = ledger or ComputeLedger()
    bank = MemoryBank() if use_bank else None
    flows = {}
    with torch.no_grad():
        for window, flags in zip(plan.groups, plan.kept):
            seq = FrameSequence([frames[i] for i in window], window)
            group_flows = run_group(seq, model, bank, ledger, iterations)
            for j, keep in enumerate(flags):
                if keep:
                    flows[window[j]] = group_flows[j]
    ordered = [flows[k] for k in range(len(frames) - 1)]
    return ordered, ledger, bank


def recursive_baseline(frames, model, group_size, iterations=None, ledger=None):
    """Stride-1 sliding windows of T frames, re-encoding every frame each time.

    Window [k .. k+T-1] contributes only its leading flow (k, k+1); the final
    window also contributes its remaining flows. Same weights, same decoder.
    """
    frames = _as_frame_list(frames)
    n = len(frames)
    if n < 2:
        raise ScheduleError(f"need at least 2 frames, got {n}")
    ledger = ledger or ComputeLedger()
    flows = {}
    with torch.no_grad():
        if n < group_size:
            window = tuple(min(j, n - 1) for j in range(group_size))
            seq = FrameSequence([frames[i] for i in window], window)
            group_flows = run_group(seq, model, None, ledger, iterations)
            for j in range(n - 1):
                flows[j] = group_flows[j]
        else:
            for start in range(n - group_size + 1):
                window = tuple(range(start, start + group_size))
                seq = FrameSequence([frames[i] for i in window], window)
                group_flows = run_group(seq, model, None, ledger, iterations)
                flows[start] = group_flows[0]
                if start == n - group_size:
                    for j in range(1, group_size - 1):
                        flows[start + j] = group_flows[j]
    ordered = [flows[k] for k in range(n - 1)]
    return ordered, ledger


@dataclass
class BenchRecord:
    mode: str
    num_frames: int
    group_size: int
    counters: dict
    wall_time: float

    def to_text(self) -> str:
        body = " ".join(f"{k}={v}" for k, v in self.counters.items())
        return (
            f"mode={self.mode} num_frames={self.num_frames} T={self.group_size} "
            f"{body} wall_time={self.wall_time:.4f}"
        )


def benchmark(frames, model, group_size, iterations=None, runs=5):
    """Run both pipelines `runs` times; returns a list of BenchRecords.

    Mode "sim" is the grouped single-pass in-batch pipeline; "recursive" is
    the stride-1 sliding-window baseline.
    """
    frames = _as_frame_list(frames)
    records = []
    for mode in ("sim", "recursive"):
        for _ in range(runs):
            ledger = ComputeLedger()
            t0 = time.perf_counter()
            if mode == "sim":
                run_video(frames, model, group_size, iterations=iterations, ledger=ledger)
            else:
                recursive_baseline(frames, model, group_size, iterations=iterations, ledger=ledger)
            records.append(BenchRecord(
                mode, len(frames), group_size, ledger.snapshot(), time.perf_counter() - t0
            ))
    return records
