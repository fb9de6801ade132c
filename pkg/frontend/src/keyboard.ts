// Keyboard-first triage: j/k walk the list, r cycles rotations, f refines,
// v verifies (and advances), x removes. Throughput is the whole point.

import { ReviewViewModel } from "./model.js";

const ROTATE_CYCLE: Array<90 | 180 | 270> = [90, 180, 270];

export class KeyboardController {
	private rotateIndex = 0;

	constructor(private readonly model: ReviewViewModel) {}

	/** Returns true when the key was handled. */
	async handle(key: string): Promise<boolean> {
		switch (key) {
			case "j":
				await this.model.next();
				return true;
			case "k":
				await this.model.prev();
				return true;
			case "r": {
				const degrees = ROTATE_CYCLE[this.rotateIndex % ROTATE_CYCLE.length]!;
				this.rotateIndex += 1;
				await this.model.rotate(degrees);
				return true;
			}
			case "f":
				await this.model.refine();
				return true;
			case "v":
				await this.model.verify();
				return true;
			case "x":
				await this.model.remove();
				return true;
			default:
				return false;
		}
	}
}
