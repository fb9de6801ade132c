"""Command line interface: annotate scenes, build trees, synth data, eval, serve."""

from __future__ import annotations

import dataclasses
import json
import sys
from pathlib import Path

import click

from .objective import RcWeights
from .refine import RefineConfig
from .search import SearchConfig


@click.group()
def main():
    """CAD model retrieval and 9-DoF alignment toolkit."""


def _parse_weights(text: str) -> RcWeights:
    parts = [float(x) for x in text.split(",")]
    if len(parts) != 3:
        raise click.BadParameter("weights must be 'dpt,sil,cd'")
    return RcWeights(lambda_dpt=parts[0], lambda_sil=parts[1], lambda_cd=parts[2])


@main.command()
@click.argument("scene", type=click.Path(exists=True))
@click.option("--db", "db_manifest", required=True, type=click.Path(exists=True))
@click.option("--trees", "trees_dir", required=True, type=click.Path(exists=True))
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--seed", default=0, show_default=True)
@click.option("--iterations", default=1200, show_default=True, help="MCTS budget per object")
@click.option("--weights", default="1,1,1", show_default=True, help="lambda_dpt,lambda_sil,lambda_cd")
@click.option("--refine-steps", default=50, show_default=True, help="in-search refinement steps")
@click.option("--final-refine-steps", default=300, show_default=True)
@click.option("--trigger-ratio", default=1.1, show_default=True)
@click.option("--cd-samples", default=None, type=int, help="cap model samples in the chamfer term")
@click.option("--no-clone", is_flag=True, help="skip per-scene clustering and cloning")
@click.option("--trace", "trace_dir", default=None, type=click.Path(), help="write per-object search traces (JSONL)")
def annotate(scene, db_manifest, trees_dir, out_path, seed, iterations, weights,
             refine_steps, final_refine_steps, trigger_ratio, cd_samples, no_clone, trace_dir):
    """Annotate SCENE (a scene.json manifest) with CAD models and poses."""
    from .pipeline import PipelineConfig, annotate_scene, load_scene, save_annotations
    from .shape_tree import CadDatabase, load_tree

    scene_id, objects = load_scene(scene)
    database = CadDatabase.load_manifest(db_manifest)
    trees = {}
    for tree_path in sorted(Path(trees_dir).glob("*.json")):
        tree = load_tree(tree_path)
        trees[tree.class_label] = tree
    if not trees:
        raise click.ClickException(f"no trees found in {trees_dir}")
    config = PipelineConfig(
        seed=seed,
        weights=_parse_weights(weights),
        search=SearchConfig(
            max_iterations=iterations,
            refine_steps=refine_steps,
            refine_trigger_ratio=trigger_ratio,
        ),
        final_refine=RefineConfig(steps=final_refine_steps, keep_history=False),
        clone_enabled=not no_clone,
        cd_samples=cd_samples,
        trace_dir=trace_dir,
    )
    result = annotate_scene(scene_id, objects, database, trees, config)
    save_annotations(result, out_path)
    click.echo(
        f"{scene_id}: {len(result.annotations)} annotations, {len(result.failures)} failures -> {out_path}"
    )
    for failure in result.failures:
        click.echo(f"  failed {failure['instance_id']}: {failure['error']}", err=True)


@main.command("build-tree")
@click.argument("db_manifest", type=click.Path(exists=True))
@click.option("--class", "class_label", required=True, help="class label to build the tree for")
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--pose-bins", default=4, show_default=True)
@click.option("--branching", default=4, show_default=True)
@click.option("--max-depth", default=6, show_default=True)
def build_tree_cmd(db_manifest, class_label, out_path, pose_bins, branching, max_depth):
    """Build the pose-bin + shape-cluster search tree for one class."""
    from .shape_tree import CadDatabase, build_tree, save_tree

    database = CadDatabase.load_manifest(db_manifest)
    models = database.by_class(class_label)
    if not models:
        raise click.ClickException(f"no models of class {class_label!r} in {db_manifest}")
    tree = build_tree(models, class_label, pose_bins=pose_bins, branching=branching, max_depth=max_depth)
    save_tree(tree, out_path)
    click.echo(f"{class_label}: {len(models)} models, {tree.num_leaves} leaves -> {out_path}")


@main.command("synth-scene")
@click.argument("outdir", type=click.Path())
@click.option("--seed", default=0, show_default=True)
@click.option("--objects", "n_objects", default=6, show_default=True)
@click.option("--views", "n_views", default=3, show_default=True)
@click.option("--width", default=192, show_default=True)
@click.option("--height", default=144, show_default=True)
@click.option("--models-per-class", default=4, show_default=True)
@click.option("--classes", default="chair,table,cabinet,sofa", show_default=True)
@click.option("--plant-180", "plant_180", default=None, type=int,
              help="emit annotations with this object index rotated 180 degrees off")
def synth_scene(outdir, seed, n_objects, n_views, width, height, models_per_class, classes, plant_180):
    """Generate a synthetic database + scene + ground truth (and optionally
    a deliberately mis-rotated annotation file for review testing)."""
    from .pipeline import SceneAnnotations, save_annotations, save_scene
    from .shape_tree import CadDatabase, build_tree, save_tree
    from .synth import make_models, make_scene, write_database

    outdir = Path(outdir)
    class_list = [c.strip() for c in classes.split(",") if c.strip()]
    models = make_models({c: models_per_class for c in class_list}, seed=seed)
    database = CadDatabase(models)
    manifest = write_database(models, outdir / "db")
    trees_dir = outdir / "trees"
    trees_dir.mkdir(parents=True, exist_ok=True)
    for label in class_list:
        tree = build_tree(database.by_class(label), label)
        save_tree(tree, trees_dir / f"{label}.json")
    scene = make_scene(
        database, seed=seed, n_objects=n_objects, n_views=n_views,
        width=width, height=height, classes=class_list,
    )
    scene_path = save_scene(scene.scene_id, scene.objects, outdir)
    gt = SceneAnnotations(
        scene_id=scene.scene_id,
        annotations=scene.gt,
        failures=[],
        config={"synthetic": True, "seed": seed},
    )
    save_annotations(gt, outdir / "gt_annotations.json")
    if plant_180 is not None:
        from .geometry import compose_up_rotation
        import math

        planted = SceneAnnotations(
            scene_id=scene.scene_id,
            annotations=[_copy(a) for a in scene.gt],
            failures=[],
            config={"synthetic": True, "seed": seed, "planted_180": plant_180},
        )
        if not (0 <= plant_180 < len(planted.annotations)):
            raise click.ClickException(f"--plant-180 index out of range 0..{len(planted.annotations) - 1}")
        bad = planted.annotations[plant_180]
        bad.pose = compose_up_rotation(bad.pose, math.pi)
        bad.pose = dataclasses.replace(
            bad.pose, translation=bad.pose.translation + [0.03, 0.0, 0.0]
        )
        bad.add_event("search", detail="planted 180-degree rotation error")
        save_annotations(planted, outdir / "annotations.json")
    click.echo(f"scene {scene.scene_id}: {n_objects} objects, db manifest {manifest}")
    click.echo(f"scene manifest: {scene_path}")


def _copy(a):
    from .pipeline import Annotation

    return Annotation.from_json(a.to_json())


@main.command()
@click.argument("pred", type=click.Path(exists=True))
@click.argument("gt", type=click.Path(exists=True))
@click.option("--json-out", "json_out", default=None, type=click.Path())
@click.option("--translation-max", default=0.20, show_default=True)
@click.option("--rotation-max", default=20.0, show_default=True)
@click.option("--scale-max", default=0.20, show_default=True)
def eval(pred, gt, json_out, translation_max, rotation_max, scale_max):
    """Alignment accuracy of PRED annotations against GT annotations."""
    from .evalmetrics import AlignmentThresholds, evaluate_annotations
    from .pipeline import load_annotations

    pred_result = load_annotations(pred)
    gt_result = load_annotations(gt)
    thresholds = AlignmentThresholds(
        translation_max=translation_max,
        rotation_max_deg=rotation_max,
        scale_ratio_max=scale_max,
    )
    report = evaluate_annotations(pred_result.annotations, gt_result.annotations, thresholds)
    click.echo(report.table())
    if json_out:
        Path(json_out).write_text(json.dumps(report.as_dict(), indent=1, sort_keys=True) + "\n")
        click.echo(f"report -> {json_out}")


@main.command()
@click.argument("scene", type=click.Path(exists=True))
@click.option("--db", "db_manifest", required=True, type=click.Path(exists=True))
@click.option("--annotations", "annotations_path", required=True, type=click.Path(exists=True))
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=8008, show_default=True)
@click.option("--token", default=None, help="require 'Authorization: Bearer <token>'")
@click.option("--ui", "ui_dir", default=None, type=click.Path(exists=True), help="serve a static UI build")
@click.option("--refine-steps", default=300, show_default=True)
@click.option("--refine-timeout", default=60.0, show_default=True)
@click.option("--cd-samples", default=None, type=int)
def serve(scene, db_manifest, annotations_path, host, port, token, ui_dir, refine_steps,
          refine_timeout, cd_samples):
    """Serve the review API (and optionally the browser UI) for one scene."""
    import uvicorn

    from .review import build_session_from_files, create_app

    session = build_session_from_files(
        scene, db_manifest, annotations_path,
        cd_samples=cd_samples, refine_steps=refine_steps, refine_timeout=refine_timeout,
    )
    app = create_app([session], token=token, ui_dir=ui_dir)
    click.echo(f"review service for scene {session.scene_id} on http://{host}:{port}", err=True)
    uvicorn.run(app, host=host, port=port, log_level="warning")


if __name__ == "__main__":
    sys.exit(main())
