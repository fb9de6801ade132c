// Typed client for the review service HTTP/JSON API. All numbers shown in
// the UI originate from these responses; the client never computes scores.

export interface SceneInfo {
	scene_id: string;
	n_annotations: number;
	n_auto: number;
}

export type AnnotationStatus = "auto" | "verified" | "edited" | "removed";

export interface AnnotationSummary {
	annotation_id: string;
	class_label: string;
	cad_id: string;
	status: AnnotationStatus;
	symmetry: string;
	score: number | null;
	revision: number;
	n_views: number;
	overlay_ref: string;
}

export interface ScoreBreakdown {
	total: number;
	dpt_term: number;
	sil_term: number;
	cd_term: number;
	views_used: number;
}

export interface AnnotationRecord {
	instance_id: string;
	class_label: string;
	cad_id: string;
	cad_class: string;
	status: AnnotationStatus;
	symmetry: string;
	score_breakdown: ScoreBreakdown | null;
	revision: number;
	provenance: Array<Record<string, unknown>>;
}

export interface OverlayStats {
	iou: number;
	diff_density: number;
	sil_term: number;
}

export interface OverlayPayload {
	annotation_id: string;
	view_index: number;
	revision: number;
	target_depth_png: string;
	candidate_depth_png: string;
	target_sil_png: string;
	candidate_sil_png: string;
	diff_png: string;
	stats: OverlayStats;
	raw_target_pgm?: string;
	raw_candidate_pgm?: string;
}

export interface ModelInfo {
	id: string;
	class: string;
}

export class ApiError extends Error {
	constructor(
		public readonly status: number,
		public readonly code: string,
		message: string,
		public readonly detail: Record<string, unknown> = {},
	) {
		super(message);
	}

	get isConflict(): boolean {
		return this.code === "revision_conflict";
	}
}

export type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

/** What the view-model needs from the service; fakes implement this in tests. */
export interface ReviewApi {
	listScenes(): Promise<SceneInfo[]>;
	listAnnotations(sceneId: string): Promise<AnnotationSummary[]>;
	overlay(annotationId: string, viewIndex: number, raw?: boolean): Promise<OverlayPayload>;
	rotate(annotationId: string, degrees: 90 | 180 | 270, expectedRevision: number): Promise<AnnotationRecord>;
	swap(annotationId: string, cadId: string, expectedRevision: number, overrideClass?: boolean): Promise<AnnotationRecord>;
	refine(annotationId: string, expectedRevision: number): Promise<AnnotationRecord>;
	setStatus(annotationId: string, status: "verified" | "removed", expectedRevision: number): Promise<AnnotationRecord>;
	listModels(classLabel?: string): Promise<ModelInfo[]>;
	exportScene(sceneId: string): Promise<string>;
}

export class ApiClient implements ReviewApi {
	constructor(
		private readonly baseUrl: string,
		private readonly token: string | null = null,
		private readonly fetchImpl: FetchLike = (...args) => fetch(...args),
	) {}

	private headers(json: boolean): Record<string, string> {
		const h: Record<string, string> = {};
		if (json) h["Content-Type"] = "application/json";
		if (this.token) h["Authorization"] = `Bearer ${this.token}`;
		return h;
	}

	private async request<T>(path: string, init?: RequestInit): Promise<T> {
		const resp = await this.fetchImpl(`${this.baseUrl}${path}`, init);
		if (!resp.ok) {
			let code = "http_error";
			let message = `${resp.status} ${resp.statusText}`;
			let detail: Record<string, unknown> = {};
			try {
				const body = await resp.json();
				code = body.code ?? code;
				message = body.message ?? message;
				detail = body.detail ?? {};
			} catch {
				// non-JSON error body; keep the status text
			}
			throw new ApiError(resp.status, code, message, detail);
		}
		return (await resp.json()) as T;
	}

	listScenes(): Promise<SceneInfo[]> {
		return this.request("/scenes", { headers: this.headers(false) });
	}

	listAnnotations(sceneId: string): Promise<AnnotationSummary[]> {
		return this.request(`/scenes/${encodeURIComponent(sceneId)}/annotations`, {
			headers: this.headers(false),
		});
	}

	overlay(annotationId: string, viewIndex: number, raw = false): Promise<OverlayPayload> {
		const query = raw ? "?raw=true" : "";
		return this.request(
			`/annotations/${encodeURIComponent(annotationId)}/overlay/${viewIndex}${query}`,
			{ headers: this.headers(false) },
		);
	}

	private mutate(path: string, body: Record<string, unknown>): Promise<AnnotationRecord> {
		return this.request(path, {
			method: "POST",
			headers: this.headers(true),
			body: JSON.stringify(body),
		});
	}

	rotate(annotationId: string, degrees: 90 | 180 | 270, expectedRevision: number) {
		return this.mutate(`/annotations/${encodeURIComponent(annotationId)}/rotate`, {
			degrees,
			expected_revision: expectedRevision,
		});
	}

	swap(annotationId: string, cadId: string, expectedRevision: number, overrideClass = false) {
		return this.mutate(`/annotations/${encodeURIComponent(annotationId)}/swap`, {
			cad_id: cadId,
			override_class: overrideClass,
			expected_revision: expectedRevision,
		});
	}

	refine(annotationId: string, expectedRevision: number) {
		return this.mutate(`/annotations/${encodeURIComponent(annotationId)}/refine`, {
			expected_revision: expectedRevision,
		});
	}

	setStatus(annotationId: string, status: "verified" | "removed", expectedRevision: number) {
		return this.mutate(`/annotations/${encodeURIComponent(annotationId)}/status`, {
			status,
			expected_revision: expectedRevision,
		});
	}

	listModels(classLabel?: string): Promise<ModelInfo[]> {
		const query = classLabel ? `?class_label=${encodeURIComponent(classLabel)}` : "";
		return this.request(`/models${query}`, { headers: this.headers(false) });
	}

	async exportScene(sceneId: string): Promise<string> {
		const resp = await this.fetchImpl(
			`${this.baseUrl}/scenes/${encodeURIComponent(sceneId)}/export`,
			{ headers: this.headers(false) },
		);
		if (!resp.ok) {
			throw new ApiError(resp.status, "export_failed", `${resp.status} ${resp.statusText}`);
		}
		return resp.text();
	}
}
