// Thin DOM layer: renders the view-model, forwards clicks and keys to it.

import { ModelInfo } from "./api.js";
import { KeyboardController } from "./keyboard.js";
import { ReviewViewModel } from "./model.js";

function el<K extends keyof HTMLElementTagNameMap>(
	tag: K,
	className = "",
	text = "",
): HTMLElementTagNameMap[K] {
	const node = document.createElement(tag);
	if (className) node.className = className;
	if (text) node.textContent = text;
	return node;
}

function pngSrc(b64: string): string {
	return `data:image/png;base64,${b64}`;
}

function fmtScore(score: number | null): string {
	return score === null ? "n/a" : score.toFixed(4);
}

export class ReviewApp {
	private modelPicker: ModelInfo[] = [];

	constructor(
		private readonly model: ReviewViewModel,
		private readonly keyboard: KeyboardController,
		private readonly root: HTMLElement,
		private readonly loadModels: (classLabel: string) => Promise<ModelInfo[]>,
	) {
		model.onChange(() => this.render());
		document.addEventListener("keydown", (event) => {
			if (event.target instanceof HTMLInputElement || event.target instanceof HTMLSelectElement)
				return;
			void this.keyboard.handle(event.key);
		});
	}

	render(): void {
		this.root.replaceChildren();
		if (this.model.connectionError) {
			const banner = el("div", "banner error", `service unreachable: ${this.model.connectionError}`);
			const retry = el("button", "", "retry");
			retry.onclick = () => void this.model.start();
			banner.append(retry);
			this.root.append(banner);
			return;
		}
		this.root.append(this.renderSidebar(), this.renderInspector(), this.renderActions());
	}

	private renderSidebar(): HTMLElement {
		const side = el("aside", "sidebar");
		const head = el("div", "sidebar-head");
		head.append(el("h1", "", this.model.sceneId ?? "no scene"));
		const sort = el("select");
		for (const [value, label] of [
			["input", "scene order"],
			["score_desc", "worst score first"],
		]) {
			const opt = el("option", "", label!);
			opt.value = value!;
			if (this.model.sortMode === value) opt.selected = true;
			sort.append(opt);
		}
		sort.onchange = () => this.model.setSortMode(sort.value as "input" | "score_desc");
		head.append(sort);
		side.append(head);

		const list = el("ul", "annotation-list");
		const groups = new Map<string, typeof rows>();
		const rows = this.model.sorted();
		for (const row of rows) {
			const group = groups.get(row.class_label) ?? [];
			group.push(row);
			groups.set(row.class_label, group);
		}
		for (const [label, groupRows] of groups) {
			list.append(el("li", "class-head", label));
			for (const row of groupRows) {
				const item = el("li", `annotation ${row.annotation_id === this.model.selectedId ? "selected" : ""}`);
				item.append(
					el("span", `badge status-${row.status}`, row.status),
					el("span", "cad", row.cad_id),
					el("span", "score", fmtScore(row.score)),
				);
				if (row.status === "removed") item.classList.add("removed");
				item.onclick = () => void this.model.select(row.annotation_id);
				list.append(item);
			}
		}
		side.append(list);

		const exportBtn = el("button", "export", "export annotations");
		exportBtn.disabled = !this.model.exportEnabled;
		exportBtn.title = this.model.exportEnabled
			? "download the final annotation file"
			: "enabled once no annotation is left in status 'auto'";
		exportBtn.onclick = () => void this.downloadExport();
		side.append(exportBtn);
		return side;
	}

	private async downloadExport(): Promise<void> {
		const text = await this.model.exportScene();
		if (text === null) return;
		const blob = new Blob([text], { type: "application/json" });
		const a = el("a");
		a.href = URL.createObjectURL(blob);
		a.download = `${this.model.sceneId}_annotations.json`;
		a.click();
		URL.revokeObjectURL(a.href);
	}

	private renderInspector(): HTMLElement {
		const main = el("main", "inspector");
		const selected = this.model.selected;
		if (!selected) {
			main.append(el("p", "placeholder", "select an annotation"));
			return main;
		}
		const header = el("div", "inspector-head");
		header.append(
			el("h2", "", `${selected.annotation_id} (${selected.class_label})`),
			el("span", `badge status-${selected.status}`, selected.status),
			el("span", "", `model ${selected.cad_id}, symmetry ${selected.symmetry}`),
		);
		const views = el("div", "view-selector");
		for (let i = 0; i < selected.n_views; i++) {
			const btn = el("button", i === this.model.viewIndex ? "active" : "", `view ${i}`);
			btn.onclick = () => void this.model.setViewIndex(i);
			views.append(btn);
		}
		header.append(views);
		main.append(header);

		if (this.model.overlayError) {
			main.append(el("div", "banner error", `render failed: ${this.model.overlayError}`));
			return main;
		}
		const overlay = this.model.overlay;
		if (!overlay) {
			main.append(el("p", "placeholder", "loading overlay..."));
			return main;
		}
		const panes = el("div", "panes");
		for (const [title, b64] of [
			["target depth", overlay.target_depth_png],
			["candidate depth", overlay.candidate_depth_png],
			["target silhouette", overlay.target_sil_png],
			["candidate silhouette", overlay.candidate_sil_png],
			["difference", overlay.diff_png],
		] as const) {
			const pane = el("figure", "pane");
			const img = el("img");
			img.src = pngSrc(b64);
			img.alt = title;
			pane.append(img, el("figcaption", "", title));
			panes.append(pane);
		}
		main.append(panes);
		main.append(
			el(
				"p",
				"stats",
				`IoU ${overlay.stats.iou.toFixed(3)} | difference density ` +
					`${(overlay.stats.diff_density * 100).toFixed(1)}%`,
			),
		);
		const history = this.model.scoreHistory.get(selected.annotation_id) ?? [];
		if (history.length) {
			const chart = el("ol", "score-history");
			for (const point of history) {
				chart.append(el("li", "", `${point.action}: ${point.total.toFixed(4)}`));
			}
			main.append(el("h3", "", "score history"), chart);
		}
		return main;
	}

	private renderActions(): HTMLElement {
		const bar = el("nav", "actions");
		const selected = this.model.selected;
		const busy =
			!selected ||
			this.model.isPending(selected.annotation_id) ||
			this.model.actionState === "pending";
		const add = (label: string, hotkey: string, run: () => void) => {
			const btn = el("button", "", `${label} [${hotkey}]`);
			btn.disabled = busy;
			btn.onclick = run;
			bar.append(btn);
		};
		add("rotate 90", "r", () => void this.model.rotate(90));
		add("rotate 180", "r", () => void this.model.rotate(180));
		add("rotate 270", "r", () => void this.model.rotate(270));
		add("refine", "f", () => void this.model.refine());
		add("verify", "v", () => void this.model.verify());
		add("remove", "x", () => void this.model.remove());

		const swapWrap = el("div", "swap");
		const picker = el("select");
		picker.append(el("option", "", "swap model..."));
		void this.populatePicker(picker);
		picker.onchange = () => {
			if (picker.value) void this.model.swap(picker.value);
		};
		swapWrap.append(picker);
		bar.append(swapWrap);

		if (this.model.actionState === "conflict") {
			const banner = el("div", "banner conflict", "annotation changed elsewhere");
			const reloadBtn = el("button", "", "reload");
			reloadBtn.onclick = () => void this.model.reload();
			banner.append(reloadBtn);
			bar.append(banner);
		} else if (this.model.actionState === "error" && this.model.lastError) {
			bar.append(el("div", "banner error", this.model.lastError));
		}
		return bar;
	}

	private async populatePicker(picker: HTMLSelectElement): Promise<void> {
		const selected = this.model.selected;
		if (!selected) return;
		if (!this.modelPicker.length) {
			this.modelPicker = await this.loadModels(selected.class_label);
		}
		for (const info of this.modelPicker) {
			if (info.class !== selected.class_label) continue;
			const opt = el("option", "", info.id);
			opt.value = info.id;
			picker.append(opt);
		}
	}
}
