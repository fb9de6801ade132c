// View-model for the review loop. Holds every piece of UI state and talks to
// the service; the DOM layer renders it and forwards user intents. All state
// here is derived from service responses - no client-side pose or score math.

import {
	AnnotationRecord,
	AnnotationSummary,
	ApiError,
	OverlayPayload,
	ReviewApi,
	SceneInfo,
} from "./api.js";

export type ActionState = "idle" | "pending" | "conflict" | "error";
export type SortMode = "input" | "score_desc";

export interface ScorePoint {
	action: string;
	total: number;
}

export class ReviewViewModel {
	scenes: SceneInfo[] = [];
	sceneId: string | null = null;
	annotations: AnnotationSummary[] = [];
	selectedId: string | null = null;
	viewIndex = 0;
	overlay: OverlayPayload | null = null;
	overlayError: string | null = null;
	actionState: ActionState = "idle";
	lastError: string | null = null;
	sortMode: SortMode = "input";
	scoreHistory = new Map<string, ScorePoint[]>();
	connectionError: string | null = null;

	private listeners: Array<() => void> = [];
	private pending = new Set<string>();

	constructor(private readonly api: ReviewApi) {}

	onChange(listener: () => void): void {
		this.listeners.push(listener);
	}

	private emit(): void {
		for (const fn of this.listeners) fn();
	}

	// -- loading ----------------------------------------------------------

	async start(): Promise<void> {
		try {
			this.scenes = await this.api.listScenes();
			this.connectionError = null;
		} catch (err) {
			this.connectionError = err instanceof Error ? err.message : String(err);
			this.emit();
			return;
		}
		const first = this.scenes[0];
		if (first) await this.loadScene(first.scene_id);
		this.emit();
	}

	async loadScene(sceneId: string): Promise<void> {
		this.sceneId = sceneId;
		await this.reload();
		const first = this.sorted()[0];
		if (first && this.selectedId === null) {
			await this.select(first.annotation_id);
		}
	}

	async reload(): Promise<void> {
		if (!this.sceneId) return;
		this.annotations = await this.api.listAnnotations(this.sceneId);
		if (this.actionState === "conflict") this.actionState = "idle";
		this.emit();
	}

	// -- selection and ordering --------------------------------------------

	sorted(): AnnotationSummary[] {
		if (this.sortMode === "input") return [...this.annotations];
		return [...this.annotations].sort(
			(a, b) => (b.score ?? -Infinity) - (a.score ?? -Infinity),
		);
	}

	get selected(): AnnotationSummary | null {
		return this.annotations.find((a) => a.annotation_id === this.selectedId) ?? null;
	}

	setSortMode(mode: SortMode): void {
		this.sortMode = mode;
		this.emit();
	}

	async select(annotationId: string): Promise<void> {
		this.selectedId = annotationId;
		this.viewIndex = 0;
		await this.refreshOverlay();
		this.emit();
	}

	private step(delta: number): string | null {
		const rows = this.sorted();
		if (!rows.length) return null;
		const idx = rows.findIndex((a) => a.annotation_id === this.selectedId);
		const next = rows[(idx + delta + rows.length) % rows.length];
		return next ? next.annotation_id : null;
	}

	async next(): Promise<void> {
		const id = this.step(1);
		if (id) await this.select(id);
	}

	async prev(): Promise<void> {
		const id = this.step(-1);
		if (id) await this.select(id);
	}

	async advanceToNextAuto(): Promise<void> {
		const rows = this.sorted();
		const candidate = rows.find(
			(a) => a.status === "auto" && a.annotation_id !== this.selectedId,
		);
		if (candidate) await this.select(candidate.annotation_id);
	}

	// -- overlay (read-only; never mutates) ---------------------------------

	async setViewIndex(index: number): Promise<void> {
		this.viewIndex = index;
		await this.refreshOverlay();
		this.emit();
	}

	async refreshOverlay(): Promise<void> {
		this.overlay = null;
		this.overlayError = null;
		if (!this.selected || this.selected.n_views === 0) return;
		try {
			this.overlay = await this.api.overlay(this.selected.annotation_id, this.viewIndex);
		} catch (err) {
			this.overlayError = err instanceof Error ? err.message : String(err);
		}
	}

	// -- mutations -----------------------------------------------------------

	get exportEnabled(): boolean {
		return this.annotations.length > 0 && this.annotations.every((a) => a.status !== "auto");
	}

	isPending(annotationId: string): boolean {
		return this.pending.has(annotationId);
	}

	private applyRecord(record: AnnotationRecord, action: string): void {
		const row = this.annotations.find((a) => a.annotation_id === record.instance_id);
		if (row) {
			row.status = record.status;
			row.cad_id = record.cad_id;
			row.revision = record.revision;
			row.score = record.score_breakdown ? record.score_breakdown.total : row.score;
		}
		if (record.score_breakdown) {
			const history = this.scoreHistory.get(record.instance_id) ?? [];
			history.push({ action, total: record.score_breakdown.total });
			this.scoreHistory.set(record.instance_id, history);
		}
	}

	private async mutate(
		action: string,
		run: (row: AnnotationSummary) => Promise<AnnotationRecord>,
	): Promise<AnnotationRecord | null> {
		const row = this.selected;
		if (!row) return null;
		if (this.pending.has(row.annotation_id)) return null; // one in-flight mutation per annotation
		this.pending.add(row.annotation_id);
		this.actionState = "pending";
		this.lastError = null;
		this.emit();
		try {
			const record = await run(row);
			this.applyRecord(record, action);
			this.actionState = "idle";
			await this.refreshOverlay();
			return record;
		} catch (err) {
			if (err instanceof ApiError && err.isConflict) {
				this.actionState = "conflict";
				this.lastError = err.message;
			} else {
				this.actionState = "error";
				this.lastError = err instanceof Error ? err.message : String(err);
			}
			return null;
		} finally {
			this.pending.delete(row.annotation_id);
			this.emit();
		}
	}

	rotate(degrees: 90 | 180 | 270) {
		return this.mutate(`rotate ${degrees}`, (row) =>
			this.api.rotate(row.annotation_id, degrees, row.revision),
		);
	}

	swap(cadId: string, overrideClass = false) {
		return this.mutate(`swap ${cadId}`, (row) =>
			this.api.swap(row.annotation_id, cadId, row.revision, overrideClass),
		);
	}

	refine() {
		return this.mutate("refine", (row) => this.api.refine(row.annotation_id, row.revision));
	}

	async verify(): Promise<AnnotationRecord | null> {
		const record = await this.mutate("verify", (row) =>
			this.api.setStatus(row.annotation_id, "verified", row.revision),
		);
		if (record) await this.advanceToNextAuto();
		return record;
	}

	remove() {
		return this.mutate("remove", (row) =>
			this.api.setStatus(row.annotation_id, "removed", row.revision),
		);
	}

	async exportScene(): Promise<string | null> {
		if (!this.sceneId || !this.exportEnabled) return null;
		return this.api.exportScene(this.sceneId);
	}
}
