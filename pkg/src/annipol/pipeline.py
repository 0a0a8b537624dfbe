"""End-to-end orchestration: simulate, select, reconstruct, analyze.

The run is split into ``rng.streams`` fixed partitions of the generated
pairs.  Each partition owns its random streams and a contiguous block of
event ids, so the results do not depend on how many worker processes
execute the partitions.  Outputs are written by the parent process in
partition order.
"""

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from annipol import analysis
from annipol.analysis import ScatterPairs
from annipol.config import RunConfig
from annipol.detector import HitTable, TransportConfig, digitize_batch
from annipol.eventio import EventWriter, dumps_json, write_histogram, write_json, write_text
from annipol.geometry import DetectorGeometry, ScattererSpec, SetupGeometry
from annipol.sampling import PURPOSE_DIGITIZE, PURPOSE_SAMPLING, PairModel, RandomStreamSpec, sample_pairs
from annipol.selection import STAGES, CutflowReport, SelectionConfig, evaluate, trigger_mask

log = logging.getLogger(__name__)

CHUNK_PAIRS = 500_000  # pairs generated per call inside one partition


def detector_from_config(sec, rotation: float = 0.0) -> DetectorGeometry:
    return DetectorGeometry(
        pixels_per_side=sec.pixels_per_side,
        pitch=sec.pitch_mm,
        crystal_side=sec.crystal_side_mm,
        crystal_length=sec.crystal_length_mm,
        distance_to_scatterer=sec.distance_mm,
        rotation_theta_scat=rotation,
        energy_resolution_fwhm_at_511=sec.fwhm_at_511,
    )


def setup_from_config(cfg: RunConfig) -> SetupGeometry:
    s = cfg.scatterer
    return SetupGeometry(
        detector_a=detector_from_config(cfg.detector_a),
        detector_b=detector_from_config(cfg.detector_b, cfg.model.theta_scat_deg),
        scatterer=ScattererSpec(side=s.side_mm, length=s.length_mm, energy_resolution_fwhm_at_511=s.fwhm_at_511,
                                active=cfg.model.mode == "active", source_distance=s.source_distance_mm),
    )


def pair_model_from_config(cfg: RunConfig) -> PairModel:
    return PairModel(kappa=cfg.model.kappa, theta_scat_nominal=cfg.model.theta_scat_deg,
                     geometry=setup_from_config(cfg))


def transport_from_config(cfg: RunConfig) -> TransportConfig:
    return TransportConfig(lambda511_mm=cfg.transport.lambda511_mm, lambda_abs_mm=cfg.transport.lambdaAbs_mm,
                           sigma_t_ns=cfg.timing.sigma_ns)


def selection_from_config(cfg: RunConfig) -> SelectionConfig:
    s = cfg.selection
    return SelectionConfig(
        pixel_threshold=s.pixel_threshold_kev,
        sum_window_half_width=s.sum_window_half_width_kev,
        timing_window=s.timing_window_ns,
        theta_scat_nominal=cfg.model.theta_scat_deg,
        scatterer_window_sigmas=s.scatterer_window_sigmas,
        mode=cfg.model.mode,
        scatterer_threshold=s.scatterer_threshold_kev,
        fwhm_b_at_511=cfg.detector_b.fwhm_at_511,
        fwhm_c_at_511=cfg.scatterer.fwhm_at_511,
    )


def partition(n_pairs: int, streams: int) -> list[tuple[int, int]]:
    """``(first_event_id, n)`` for every partition; sizes differ by at most one."""
    base, extra = divmod(n_pairs, streams)
    out, start = [], 0
    for k in range(streams):
        n = base + (k < extra)
        out.append((start, n))
        start += n
    return out


def _quantize(table: HitTable) -> HitTable:
    # Round to the event-file precision so in-memory and file-based analyses agree.
    table.energy = np.round(table.energy, 3)
    table.time = np.round(table.time, 3)
    if table.has_truth:
        for name in ("truth_theta1", "truth_theta2", "truth_dphi", "truth_thetascat"):
            setattr(table, name, np.round(getattr(table, name), 3))
    return table


def simulate_partition(cfg: RunConfig, stream_id: int, with_truth: bool = True) -> HitTable:
    """Triggered events of one partition."""
    first_id, n = partition(cfg.run.n_pairs, cfg.rng.streams)[stream_id]
    spec = RandomStreamSpec(cfg.rng.master_seed, stream_id)
    rng_sample = spec.generator(PURPOSE_SAMPLING)
    rng_digi = spec.generator(PURPOSE_DIGITIZE)
    model = pair_model_from_config(cfg)
    transport = transport_from_config(cfg)
    active = cfg.model.mode == "active"
    parts = []
    for start in range(0, n, CHUNK_PAIRS):
        m = min(CHUNK_PAIRS, n - start)
        pairs = sample_pairs(model, rng_sample, m)
        table = digitize_batch(pairs, model.geometry, transport, rng_digi, first_event_id=first_id + start,
                               scatterer_active=active, with_truth=with_truth)
        ids, trig = trigger_mask(table, cfg.model.mode)
        parts.append(_quantize(table.take_events(ids[trig])))
    return HitTable.concatenate(parts) if parts else HitTable.empty(with_truth)


@dataclass
class PartitionResult:
    events: HitTable | None
    selected: HitTable | None
    counts: np.ndarray
    n_input: int
    pairs: ScatterPairs


def select_and_reconstruct(table: HitTable, cfg: RunConfig):
    """Selection verdicts, accepted hits and reconstructed scatters of one table."""
    result = evaluate(table, selection_from_config(cfg))
    selected = table.take_events(result.accepted_ids())
    pairs = analysis.reconstruct_events(selected, cfg.selection.pixel_threshold_kev,
                                        detector_from_config(cfg.detector_a),
                                        detector_from_config(cfg.detector_b))
    return result, selected, pairs


def _partition_task(args) -> PartitionResult:
    cfg, stream_id, keep_tables = args
    events = simulate_partition(cfg, stream_id, with_truth=cfg.output.write_truth)
    result, selected, pairs = select_and_reconstruct(events, cfg)
    report = result.cutflow()
    counts = np.array([c for _, c in report.counts])
    if not keep_tables:
        events = selected = None
    return PartitionResult(events, selected, counts, report.n_input, pairs)


def iter_partitions(cfg: RunConfig, workers: int = 1, keep_tables: bool = True):
    """Yield :class:`PartitionResult` objects in partition order."""
    tasks = [(cfg, k, keep_tables) for k in range(cfg.rng.streams)]
    if workers <= 1:
        for t in tasks:
            yield _partition_task(t)
        return
    with ProcessPoolExecutor(max_workers=workers) as pool:
        yield from pool.map(_partition_task, tasks)


def merge_pairs(parts) -> ScatterPairs:
    parts = list(parts)
    names = ("event_id", "theta1", "phi1", "theta2", "phi2")
    if not parts:
        return ScatterPairs(*(np.empty(0) for _ in names))
    return ScatterPairs(*(np.concatenate([getattr(p, f) for p in parts]) for f in names))


def merge_cutflow(counts, n_input) -> CutflowReport:
    return CutflowReport(list(zip(STAGES, (int(c) for c in counts))), n_input=int(n_input))


def simulate_and_reconstruct(cfg: RunConfig, workers: int = 1) -> tuple[ScatterPairs, CutflowReport]:
    """Whole chain up to reconstructed scatters, without touching the file system."""
    pairs, counts, n_input = [], np.zeros(len(STAGES), dtype=np.int64), 0
    for res in iter_partitions(cfg, workers, keep_tables=False):
        pairs.append(res.pairs)
        counts += res.counts
        n_input += res.n_input
    return merge_pairs(pairs), merge_cutflow(counts, n_input)


def analyze(pairs: ScatterPairs, cfg: RunConfig):
    """Histogram, mixing, correction and fit with the config's analysis settings."""
    a = cfg.analysis
    return analysis.analyze_pairs(pairs, cfg.theta1_window(), cfg.theta2_window(), a.bins, a.mix,
                                  mix_seed=cfg.rng.master_seed)


def theta_systematic(pairs: ScatterPairs, cfg: RunConfig) -> float:
    a = cfg.analysis
    return analysis.estimate_theta_systematic(pairs, cfg.theta1_window(), cfg.theta2_window(), a.sigma_theta_deg,
                                              a.bins, a.mix, mix_seed=cfg.rng.master_seed)


def artifact_paths(prefix) -> dict[str, str]:
    prefix = str(prefix)
    return {
        "config": f"{prefix}_config.cfg",
        "events": f"{prefix}_events.csv",
        "selected": f"{prefix}_selected.csv",
        "cutflow": f"{prefix}_cutflow.txt",
        "histogram": f"{prefix}_hist.csv",
        "fit": f"{prefix}_fit.json",
        "manifest": f"{prefix}_manifest.json",
    }


@dataclass
class RunResult:
    fit: analysis.FitResult
    histogram: analysis.DeltaPhiHistogram
    cutflow: CutflowReport
    n_events: int
    systematic: float
    paths: dict[str, str] = field(default_factory=dict)
    manifest: dict = field(default_factory=dict)


def run_pipeline(cfg: RunConfig, out_prefix=None, workers: int = 1) -> RunResult:
    """Simulate, select and analyze, writing every artifact under ``out_prefix``."""
    prefix = out_prefix if out_prefix is not None else cfg.output.prefix
    paths = artifact_paths(prefix)
    Path(paths["events"]).parent.mkdir(parents=True, exist_ok=True)
    truth = cfg.output.write_truth
    write_text(paths["config"], cfg.to_text())

    pairs, counts, n_input = [], np.zeros(len(STAGES), dtype=np.int64), 0
    with EventWriter(paths["events"], truth) as ev_out, EventWriter(paths["selected"], truth) as sel_out:
        for k, res in enumerate(iter_partitions(cfg, workers, keep_tables=True)):
            ev_out.write(res.events)
            sel_out.write(res.selected)
            pairs.append(res.pairs)
            counts += res.counts
            n_input += res.n_input
            log.info("partition %d/%d: %d events, %d accepted", k + 1, cfg.rng.streams, res.n_input, res.counts[-1])
    merged = merge_pairs(pairs)
    cutflow = merge_cutflow(counts, n_input)
    write_text(paths["cutflow"], cutflow.as_text())

    hist, fit, n_events = analyze(merged, cfg)
    syst = theta_systematic(merged, cfg)
    write_histogram(paths["histogram"], hist)
    report = fit.report(n_events)
    write_json(paths["fit"], report)

    manifest = {
        "config_sha256": cfg.sha256(),
        "master_seed": cfg.rng.master_seed,
        "n_pairs": cfg.run.n_pairs,
        "streams": cfg.rng.streams,
        "counts": {"events_written": n_input, **dict(cutflow.counts), "fit_events": n_events},
        "fit": report,
        "theta_systematic": syst,
        "outputs": {k: v for k, v in paths.items() if k != "manifest"},
        "config": cfg.to_text(),
    }
    write_text(paths["manifest"], dumps_json(manifest))
    return RunResult(fit, hist, cutflow, n_events, syst, paths, manifest)
