"""Command-line orchestration of the pipelines.

Every subcommand writes its artifacts plus a run manifest (parameters and
content hashes) into the output directory; writes are atomic (temp file +
rename) so partial artifacts never appear. Exit codes: 0 success, 2 config
error, 3 data error, 4 analysis error.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import tempfile
from dataclasses import dataclass, field

import numpy as np

from . import bundle, cluster_graph, density, flow_io, models, patch_core, svg
from .angles import circular_correlation, wrap
from .errors import (
    AnalysisError,
    ConfigError,
    DataError,
    FlowBundleError,
    MissingArtifact,
)
from .persistence import rips_persistence


@dataclass
class PipelineConfig:
    """Defaults mirror the reference experiment's operating points."""

    per_frame: int = 4000
    contrast_percent: float = 20.0
    downsample_n: int = 250_000
    core_specs: list = field(default_factory=lambda: [[1500, 50], [50, 60]])
    cover_sets: int = 16
    cover_overlap: float = 0.5
    dbscan_eps: float = 0.3
    dbscan_min_pts: int = 5
    weight_cut: float = 0.07
    prime: int = 47
    seed: int = 0
    metric: str = "euclidean"
    out_dir: str = "out"

    def validate(self):
        if self.per_frame < 1:
            raise ConfigError("per_frame must be >= 1")
        if not 0 < self.contrast_percent <= 100:
            raise ConfigError("contrast_percent must be in (0, 100]")
        if self.downsample_n < 1:
            raise ConfigError("downsample_n must be >= 1")
        for k, q in self.core_specs:
            if k < 1 or not 0 < q <= 100:
                raise ConfigError(f"bad core spec ({k}, {q})")
        if self.cover_sets < 3:
            raise ConfigError("cover_sets must be >= 3")
        if not 0 < self.cover_overlap <= 0.5:
            raise ConfigError("cover_overlap must be in (0, 1/2]")
        if self.dbscan_eps <= 0 or self.dbscan_min_pts < 1:
            raise ConfigError("bad dbscan parameters")
        if self.weight_cut < 0:
            raise ConfigError("weight_cut must be >= 0")
        if self.metric not in ("euclidean", "dmetric"):
            raise ConfigError("metric must be 'euclidean' or 'dmetric'")
        return self


def load_config(path=None, overrides=None) -> PipelineConfig:
    cfg = PipelineConfig()
    if path:
        try:
            with open(path) as fh:
                data = json.load(fh)
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError(f"cannot read config {path}: {e}") from e
        for key, val in data.items():
            if not hasattr(cfg, key):
                raise ConfigError(f"unknown config field {key!r}")
            setattr(cfg, key, val)
    for key, val in (overrides or {}).items():
        if val is not None:
            setattr(cfg, key, val)
    return cfg.validate()


def thread_count() -> int:
    try:
        return max(1, int(os.environ.get("FLOWBUNDLE_THREADS", "1")))
    except ValueError:
        return 1


# -- artifact plumbing ---------------------------------------------------------

def atomic_write(path, data) -> None:
    mode = "wb" if isinstance(data, bytes) else "w"
    fd, tmp = tempfile.mkstemp(dir=os.path.dirname(path) or ".",
                               prefix=os.path.basename(path) + ".tmp")
    try:
        with os.fdopen(fd, mode) as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def json_dumps(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


class RunWriter:
    """Collects artifacts and writes the run manifest at the end."""

    def __init__(self, out_dir, subcommand, parameters, inputs=()):
        os.makedirs(out_dir, exist_ok=True)
        self.out_dir = out_dir
        self.subcommand = subcommand
        self.parameters = parameters
        self.inputs = {str(p): sha256_file(p) for p in inputs}
        self.outputs = {}

    def write(self, name, data):
        path = os.path.join(self.out_dir, name)
        atomic_write(path, data)
        self.outputs[name] = sha256_file(path)
        return path

    def finish(self):
        manifest = {
            "subcommand": self.subcommand,
            "parameters": self.parameters,
            "inputs": self.inputs,
            "outputs": self.outputs,
        }
        path = os.path.join(self.out_dir, f"run_manifest_{self.subcommand}.json")
        atomic_write(path, json_dumps(manifest))
        return path


# -- reporting helpers -----------------------------------------------------------

def directionality_percentiles(datasets: dict) -> str:
    """101-point percentile curves of directionality, one column per dataset."""
    names = list(datasets)
    pcts = np.arange(101)
    cols = {}
    for name in names:
        r = patch_core.directionality(datasets[name].patches)
        cols[name] = np.percentile(r, pcts)
    lines = ["percentile," + ",".join(names)]
    for i, p in enumerate(pcts):
        lines.append(f"{p}," + ",".join(f"{cols[n][i]:.17g}" for n in names))
    return "\n".join(lines) + "\n"


def annotate_locations(ds: flow_io.PatchDataset, tiers) -> str:
    """Per record: frame, row, col, and the smallest contrast tier it enters."""
    tiers = sorted(tiers)  # ascending percent = most exclusive first
    thresholds = [flow_io.nearest_rank_threshold(ds.contrast, t) for t in tiers]
    lines = ["frame,row,col,tier"]
    for i in range(len(ds)):
        tier = ""
        for t, thr in zip(tiers, thresholds):
            if ds.contrast[i] >= thr:
                tier = f"{t:g}"
                break
        lines.append(f"{int(ds.frames[i])},{int(ds.rows[i])},{int(ds.cols[i])},{tier}")
    return "\n".join(lines) + "\n"


def base_angles_for(ds: flow_io.PatchDataset, kind: str):
    """Base circle feature map: direction (RP^1), lifted direction, or Klein."""
    if kind == "klein":
        return models.klein_base_angle(ds.patches), 2 * np.pi
    if kind == "lifted":
        return bundle.lifted_directions(ds.patches), 2 * np.pi
    return np.mod(patch_core.predominant_directions(ds.patches), np.pi), np.pi


def _load_ground_truth(out_dir):
    path = os.path.join(out_dir, "ground_truth.csv")
    if not os.path.exists(path):
        return None
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        rows = [line.strip().split(",") for line in fh if line.strip()]
    cols = {h: np.array([float(r[i]) for r in rows]) for i, h in enumerate(header)}
    return cols


# -- subcommands -------------------------------------------------------------------

def cmd_synthetic(cfg, args):
    writer = RunWriter(cfg.out_dir, "synthetic",
                       {"model": args.model, "n": args.n, "sigma": args.sigma,
                        "seed": cfg.seed})
    sample = models.sample_model(args.model, args.n, args.sigma, cfg.seed,
                                 edge_pair=args.edge_pair)
    writer.write("dataset.bin", flow_io.dataset_to_bytes(sample.dataset))
    if args.csv:
        writer.write("dataset.csv", flow_io.dataset_to_csv(sample.dataset))
    gt = sample.ground_truth
    names = list(gt)
    lines = [",".join(names)]
    for i in range(len(sample.dataset)):
        lines.append(",".join(f"{gt[nm][i]:.17g}" for nm in names))
    writer.write("ground_truth.csv", "\n".join(lines) + "\n")
    writer.write("model.json", json_dumps({"model": args.model, "sigma": args.sigma}))
    writer.finish()
    return 0


def cmd_ingest(cfg, args):
    writer = RunWriter(cfg.out_dir, "ingest", {"files": args.flo}, inputs=args.flo)
    summary = []
    for path in args.flo:
        f = flow_io.read_flo_file(path)
        summary.append({"path": str(path), "width": f.width, "height": f.height,
                        "valid_pixels": int(f.valid_mask().sum())})
    writer.write("ingest_summary.json", json_dumps(summary))
    writer.finish()
    return 0


def cmd_sample(cfg, args):
    writer = RunWriter(cfg.out_dir, "sample",
                       {"files": args.flo, "per_frame": cfg.per_frame,
                        "seed": cfg.seed}, inputs=args.flo)
    fields = [flow_io.read_flo_file(p) for p in args.flo]
    ds = flow_io.sample_patches(fields, cfg.per_frame, cfg.seed)
    writer.write("dataset_raw.bin", flow_io.dataset_to_bytes(ds))
    writer.finish()
    return 0


def cmd_preprocess(cfg, args):
    writer = RunWriter(cfg.out_dir, "preprocess",
                       {"dataset": args.dataset,
                        "contrast_percent": cfg.contrast_percent,
                        "downsample_n": cfg.downsample_n, "seed": cfg.seed},
                       inputs=[args.dataset])
    ds = flow_io.load_dataset(args.dataset)
    ds = flow_io.top_contrast_filter(ds, cfg.contrast_percent)
    if cfg.downsample_n < len(ds):
        ds = flow_io.downsample(ds, cfg.downsample_n, cfg.seed)
    writer.write("dataset.bin", flow_io.dataset_to_bytes(ds))
    if args.csv:
        writer.write("dataset.csv", flow_io.dataset_to_csv(ds))
    writer.write("locations.csv", annotate_locations(ds, [1.0, 20.0]))
    writer.finish()
    return 0


def cmd_density(cfg, args):
    writer = RunWriter(cfg.out_dir, "density",
                       {"dataset": args.dataset, "core_specs": cfg.core_specs,
                        "metric": cfg.metric}, inputs=[args.dataset])
    ds = flow_io.load_dataset(args.dataset)
    curves = {"X": ds}
    for k, q in cfg.core_specs:
        rho = density.dataset_knn_distances(ds, int(k), metric=cfg.metric)
        writer.write(f"density_k{int(k)}.csv", density.density_csv(rho))
        core = density.core_subset(ds, int(k), float(q), metric=cfg.metric)
        writer.write(f"core_k{int(k)}_q{q:g}.bin", flow_io.dataset_to_bytes(core))
        curves[f"X_k{int(k)}_q{q:g}"] = core
    writer.write("directionality_percentiles.csv",
                 directionality_percentiles(curves))
    writer.finish()
    return 0


def cmd_persistence(cfg, args):
    writer = RunWriter(cfg.out_dir, "persistence",
                       {"dataset": args.dataset, "max_dim": args.max_dim,
                        "max_scale": args.max_scale, "subsample": args.subsample,
                        "prime": cfg.prime, "seed": cfg.seed},
                       inputs=[args.dataset])
    ds = flow_io.load_dataset(args.dataset)
    pts = ds.patches
    if args.subsample and args.subsample < len(ds):
        rng = np.random.default_rng(cfg.seed)
        pts = pts[np.sort(rng.choice(len(ds), args.subsample, replace=False))]
    res = rips_persistence(points=pts, max_dim=args.max_dim,
                           max_scale=args.max_scale, prime=cfg.prime)
    writer.write("diagram.csv", res.diagram.to_csv())
    writer.finish()
    return 0


def cmd_bundle(cfg, args):
    writer = RunWriter(cfg.out_dir, "bundle",
                       {"dataset": args.dataset, "cover_sets": cfg.cover_sets,
                        "cover_overlap": cfg.cover_overlap, "base": args.base,
                        "prime": cfg.prime}, inputs=[args.dataset])
    ds = flow_io.load_dataset(args.dataset)
    base, period = base_angles_for(ds, args.base)
    result = bundle.run_bundle_pipeline(
        ds.patches, base, n_sets=cfg.cover_sets, overlap=cfg.cover_overlap,
        period=period, prime=cfg.prime, threads=thread_count())
    report = {
        "cover": {"n_sets": cfg.cover_sets, "overlap": cfg.cover_overlap,
                  "period": period, "radius": result.cover.radius},
        "dropped_undirectional": result.n_dropped,
        "edges": [
            {"sets": list(e), "omega": result.cocycle.omegas[i].ravel().tolist(),
             "alignment_error": float(result.cocycle.errors[i]),
             "overlap_size": int(result.cocycle.overlap_sizes[i]),
             "det_sign": int(result.orientation.signs[i])}
            for i, e in enumerate(result.cocycle.edges)
        ],
        "orientation_class": result.orientation.signs.tolist(),
        "cycle_det_product": result.orientation.cycle_product,
        "orientable": result.orientable,
        "potential": (result.orientation.potential.tolist()
                      if result.orientable else None),
        "verdict": "coboundary" if result.orientable else "NotCoboundary",
    }
    if result.orientable:
        report["sync_residual"] = result.sync_residual
        tr = result.trivialization
        report["karcher_degenerate_points"] = tr.n_degenerate
        report["chart_disagreement_max"] = float(tr.chart_disagreement.max())
        report["chart_disagreement_mean"] = float(tr.chart_disagreement.mean())
        writer.write("trivialization.csv", tr.to_csv())
        gt = _load_ground_truth(cfg.out_dir)
        if gt is not None and "alpha" in gt and "theta" in gt:
            a, th = gt["alpha"], gt["theta"]
            idx = tr.point_indices
            report["ground_truth_correlation"] = max(
                circular_correlation(tr.fiber, wrap(a - th)[idx]),
                circular_correlation(tr.fiber, wrap(a + th)[idx]))
    writer.write("bundle_report.json", json_dumps(report))
    writer.finish()
    return 0


def cmd_clusters(cfg, args):
    writer = RunWriter(cfg.out_dir, "clusters",
                       {"dataset": args.dataset, "eps": cfg.dbscan_eps,
                        "min_pts": cfg.dbscan_min_pts, "cover_sets": cfg.cover_sets,
                        "cover_overlap": cfg.cover_overlap,
                        "weight_cut": cfg.weight_cut}, inputs=[args.dataset])
    ds = flow_io.load_dataset(args.dataset)
    base, period = base_angles_for(ds, "direction")
    cover = bundle.build_cover(cfg.cover_sets, cfg.cover_overlap, period)
    fibers, dropped = bundle.assign_fibers(base, cover)
    labels = [cluster_graph.dbscan(ds.patches[f], cfg.dbscan_eps,
                                   cfg.dbscan_min_pts) for f in fibers]
    graph = cluster_graph.build_cluster_graph(fibers, labels, cover.nerve_edges)
    rec_comp, node_comp = cluster_graph.global_clusters(graph, len(ds))
    catalog = cluster_graph.step_edge_catalog()
    quad_catalog = cluster_graph.quadratic_catalog()
    nodes_out = []
    for i, node in enumerate(graph.nodes):
        entry = {"fiber": node.fiber, "label": node.label,
                 "size": int(len(node.members)), "component": int(node_comp[i])}
        try:
            m = cluster_graph.match_step_edge(ds.patches[node.members], catalog)
            entry["step_edge"] = {"edge_id": m.edge_id, "direction": m.direction,
                                  "distance": m.distance,
                                  "antipodal_edge_id": m.antipodal_edge_id}
        except (AnalysisError, DataError):
            # outlier cluster: report how far it sits from the quadratic family
            entry["step_edge"] = None
            entry["quadratic_distance"] = cluster_graph.nearest_quadratic_distance(
                ds.patches[node.members], quad_catalog)
        nodes_out.append(entry)
    n_comps = int(node_comp.max()) + 1 if len(graph.nodes) else 0
    comp_sizes = [int(np.sum(rec_comp == c)) for c in range(n_comps)]
    analyses = {}
    for c in range(n_comps):
        recs = np.nonzero(rec_comp == c)[0]
        if len(recs) < 40:
            continue
        ana = cluster_graph.component_circular_analysis(
            ds.patches[recs], prime=cfg.prime)
        analyses[c] = ana.outcome
        writer.write(f"component_{c}_diagram.csv", ana.diagram.to_csv())
        if ana.coords is not None:
            lines = ["point_index,angle"]
            for local_i, ang in zip(recs[ana.indices], ana.coords.values):
                lines.append(f"{int(local_i)},{ang:.17g}")
            writer.write(f"component_{c}_coords.csv", "\n".join(lines) + "\n")
    cut_components = cluster_graph.filtration_components(graph, cfg.weight_cut)
    light_edges = int(np.sum(graph.weights <= cfg.weight_cut))
    graph_json = {
        "nodes": nodes_out,
        "edges": [{"a": int(a), "b": int(b), "weight": float(w)}
                  for (a, b), w in zip(graph.edges, graph.weights)],
        "n_components": n_comps,
        "component_record_counts": comp_sizes,
        "component_outcomes": {str(k): v for k, v in analyses.items()},
        "weight_cut": cfg.weight_cut,
        "components_after_cut": cut_components,
        "edges_below_cut": light_edges,
        "dropped_undirectional": dropped,
    }
    writer.write("graph.json", json_dumps(graph_json))
    # summary: clusters per fiber, nodes per component, component cardinality
    lines = ["fiber,n_clusters"]
    for j, lab in enumerate(labels):
        lines.append(f"{j},{int(lab.max()) + 1 if len(lab) and lab.max() >= 0 else 0}")
    lines.append("component,n_nodes,n_records")
    for c in range(n_comps):
        lines.append(f"{c},{int(np.sum(node_comp == c))},{comp_sizes[c]}")
    writer.write("cluster_summary.csv", "\n".join(lines) + "\n")
    writer.finish()
    return 0


def cmd_report(cfg, args):
    manifests = {}
    for name in sorted(os.listdir(cfg.out_dir)) if os.path.isdir(cfg.out_dir) else []:
        if name.startswith("run_manifest_") and name.endswith(".json"):
            with open(os.path.join(cfg.out_dir, name)) as fh:
                manifests[name] = json.load(fh)
    if not manifests:
        raise MissingArtifact(f"no run manifests under {cfg.out_dir}")
    report = {"runs": manifests}
    bundle_path = os.path.join(cfg.out_dir, "bundle_report.json")
    if os.path.exists(bundle_path):
        with open(bundle_path) as fh:
            report["bundle"] = json.load(fh)
    graph_path = os.path.join(cfg.out_dir, "graph.json")
    if os.path.exists(graph_path):
        with open(graph_path) as fh:
            g = json.load(fh)
        report["clusters"] = {k: g[k] for k in
                              ("n_components", "components_after_cut",
                               "edges_below_cut", "component_outcomes")}
    writer = RunWriter(cfg.out_dir, "report", {"sources": sorted(manifests)})
    writer.write("report.json", json_dumps(report))
    pct_path = os.path.join(cfg.out_dir, "directionality_percentiles.csv")
    if os.path.exists(pct_path):
        with open(pct_path) as fh:
            header = fh.readline().strip().split(",")[1:]
            rows = np.array([[float(v) for v in line.split(",")]
                             for line in fh if line.strip()])
        series = [(name, rows[:, 0], rows[:, 1 + i])
                  for i, name in enumerate(header)]
        writer.write("report.svg", svg.svg_plot(
            series, title="directionality percentiles"))
    else:
        writer.write("report.svg", svg.svg_plot(
            [("runs", np.arange(len(manifests)), np.ones(len(manifests)))],
            title="completed pipeline stages", kind="scatter"))
    writer.finish()
    return 0


# -- entry point ---------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="flowbundle",
                                description="Topological models of optical-flow patches")
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--seed", type=int, help="RNG seed override")
    p.add_argument("--out", help="output directory")
    sub = p.add_subparsers(dest="subcommand", required=True)

    sp = sub.add_parser("synthetic", help="sample a model space")
    sp.add_argument("--model", required=True, choices=sorted(models.MODEL_IDS))
    sp.add_argument("--n", type=int, required=True)
    sp.add_argument("--sigma", type=float, default=0.0)
    sp.add_argument("--edge-pair", type=int, default=None)
    sp.add_argument("--csv", action="store_true", help="also export dataset.csv")

    sp = sub.add_parser("ingest", help="validate .flo files")
    sp.add_argument("--flo", nargs="+", required=True)

    sp = sub.add_parser("sample", help="sample raw patches from .flo frames")
    sp.add_argument("--flo", nargs="+", required=True)
    sp.add_argument("--per-frame", type=int, dest="per_frame")

    sp = sub.add_parser("preprocess", help="contrast filter + downsample")
    sp.add_argument("--dataset", required=True)
    sp.add_argument("--contrast-percent", type=float, dest="contrast_percent")
    sp.add_argument("--downsample-n", type=int, dest="downsample_n")
    sp.add_argument("--csv", action="store_true", help="also export dataset.csv")

    sp = sub.add_parser("density", help="knn density and core subsets")
    sp.add_argument("--dataset", required=True)
    sp.add_argument("--metric", choices=["euclidean", "dmetric"])

    sp = sub.add_parser("persistence", help="Rips persistence diagram")
    sp.add_argument("--dataset", required=True)
    sp.add_argument("--max-dim", type=int, default=1)
    sp.add_argument("--max-scale", type=float, default=None)
    sp.add_argument("--subsample", type=int, default=None)

    sp = sub.add_parser("bundle", help="circle bundle inference")
    sp.add_argument("--dataset", required=True)
    sp.add_argument("--base", choices=["direction", "lifted", "klein"],
                    default="direction")
    sp.add_argument("--cover-sets", type=int, dest="cover_sets")
    sp.add_argument("--cover-overlap", type=float, dest="cover_overlap")

    sp = sub.add_parser("clusters", help="fiberwise DBSCAN cluster graph")
    sp.add_argument("--dataset", required=True)
    sp.add_argument("--eps", type=float, dest="dbscan_eps")
    sp.add_argument("--min-pts", type=int, dest="dbscan_min_pts")
    sp.add_argument("--weight-cut", type=float, dest="weight_cut")
    sp.add_argument("--cover-sets", type=int, dest="cover_sets")

    sub.add_parser("report", help="aggregate artifacts into a summary")
    return p


_CONFIG_KEYS = ("per_frame", "contrast_percent", "downsample_n", "cover_sets",
                "cover_overlap", "dbscan_eps", "dbscan_min_pts", "weight_cut",
                "metric")

_HANDLERS = {
    "synthetic": cmd_synthetic,
    "ingest": cmd_ingest,
    "sample": cmd_sample,
    "preprocess": cmd_preprocess,
    "density": cmd_density,
    "persistence": cmd_persistence,
    "bundle": cmd_bundle,
    "clusters": cmd_clusters,
    "report": cmd_report,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return 0 if e.code == 0 else 2
    overrides = {k: getattr(args, k, None) for k in _CONFIG_KEYS}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.out is not None:
        overrides["out_dir"] = args.out
    try:
        cfg = load_config(args.config, overrides)
        return _HANDLERS[args.subcommand](cfg, args)
    except ConfigError as e:
        print(json_dumps({"error": type(e).__name__, "message": str(e)}),
              file=sys.stderr, end="")
        return 2
    except DataError as e:
        print(json_dumps({"error": type(e).__name__, "message": str(e)}),
              file=sys.stderr, end="")
        return 3
    except (AnalysisError, FlowBundleError) as e:
        print(json_dumps({"error": type(e).__name__, "message": str(e)}),
              file=sys.stderr, end="")
        return 4


if __name__ == "__main__":
    sys.exit(main())
