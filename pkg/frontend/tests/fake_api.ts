// In-memory service double for view-model unit tests. Mimics the real
// service's revision/status semantics and logs every call.

import {
	AnnotationRecord,
	AnnotationStatus,
	AnnotationSummary,
	ApiError,
	ModelInfo,
	OverlayPayload,
	ReviewApi,
	SceneInfo,
} from "../src/api.js";

export function summary(partial: Partial<AnnotationSummary> & { annotation_id: string }): AnnotationSummary {
	return {
		class_label: "chair",
		cad_id: "chair_0",
		status: "auto",
		symmetry: "none",
		score: 1.0,
		revision: 0,
		n_views: 2,
		overlay_ref: `/annotations/${partial.annotation_id}/overlay/0`,
		...partial,
	};
}

export class FakeApi implements ReviewApi {
	rows: AnnotationSummary[];
	calls: string[] = [];
	overlayCalls = 0;
	conflictOnce = false;
	gate: Promise<void> | null = null;
	scoreAfterMutation = 0.5;

	constructor(rows: AnnotationSummary[]) {
		this.rows = rows;
	}

	private row(id: string): AnnotationSummary {
		const row = this.rows.find((r) => r.annotation_id === id);
		if (!row) throw new ApiError(404, "not_found", `unknown annotation ${id}`);
		return row;
	}

	private async mutate(
		id: string,
		expectedRevision: number,
		action: string,
		status?: AnnotationStatus,
	): Promise<AnnotationRecord> {
		this.calls.push(`${action}:${id}`);
		if (this.gate) await this.gate;
		if (this.conflictOnce) {
			this.conflictOnce = false;
			throw new ApiError(409, "revision_conflict", "stale revision", {
				expected_revision: expectedRevision,
				actual_revision: expectedRevision + 1,
			});
		}
		const row = this.row(id);
		if (row.status === "removed") throw new ApiError(409, "illegal_status", "removed");
		row.revision += 1;
		if (status) row.status = status;
		else if (action.startsWith("rotate") || action.startsWith("swap")) row.status = "edited";
		row.score = this.scoreAfterMutation;
		return {
			instance_id: id,
			class_label: row.class_label,
			cad_id: row.cad_id,
			cad_class: row.class_label,
			status: row.status,
			symmetry: row.symmetry,
			score_breakdown: {
				total: this.scoreAfterMutation,
				dpt_term: 0,
				sil_term: 0,
				cd_term: this.scoreAfterMutation,
				views_used: row.n_views,
			},
			revision: row.revision,
			provenance: [],
		};
	}

	async listScenes(): Promise<SceneInfo[]> {
		this.calls.push("listScenes");
		return [
			{
				scene_id: "scene0",
				n_annotations: this.rows.length,
				n_auto: this.rows.filter((r) => r.status === "auto").length,
			},
		];
	}

	async listAnnotations(sceneId: string): Promise<AnnotationSummary[]> {
		this.calls.push(`listAnnotations:${sceneId}`);
		return this.rows.map((r) => ({ ...r }));
	}

	async overlay(annotationId: string, viewIndex: number): Promise<OverlayPayload> {
		this.overlayCalls += 1;
		this.row(annotationId);
		return {
			annotation_id: annotationId,
			view_index: viewIndex,
			revision: this.row(annotationId).revision,
			target_depth_png: "",
			candidate_depth_png: "",
			target_sil_png: "",
			candidate_sil_png: "",
			diff_png: "",
			stats: { iou: 0.9, diff_density: 0.02, sil_term: 0.1 },
		};
	}

	rotate(id: string, degrees: 90 | 180 | 270, rev: number) {
		return this.mutate(id, rev, `rotate${degrees}`);
	}

	swap(id: string, cadId: string, rev: number) {
		return this.mutate(id, rev, `swap:${cadId}`);
	}

	refine(id: string, rev: number) {
		return this.mutate(id, rev, "refine");
	}

	setStatus(id: string, status: "verified" | "removed", rev: number) {
		return this.mutate(id, rev, `status:${status}`, status);
	}

	async listModels(classLabel?: string): Promise<ModelInfo[]> {
		this.calls.push("listModels");
		return [
			{ id: "chair_0", class: "chair" },
			{ id: "chair_1", class: "chair" },
		].filter((m) => !classLabel || m.class === classLabel);
	}

	async exportScene(sceneId: string): Promise<string> {
		this.calls.push(`export:${sceneId}`);
		return JSON.stringify({ scene_id: sceneId, annotations: this.rows });
	}
}
