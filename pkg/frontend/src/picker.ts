import { isKnownCode } from "./codes.js";

export const MAX_CODES = 3;
export const MAX_CODES_MESSAGE = "max 3 codes";

export type ToggleResult = { ok: true; selected: string[] } | { ok: false; blocked: string };

/**
 * Selection model for the 17-code picker. Enforces the 1-3 codes rule on
 * the client so an invalid payload can never be submitted; the server
 * stays authoritative.
 */
export class CodePicker {
  private selected: string[] = [];

  constructor(initial: Iterable<string> = []) {
    for (const code of initial) {
      this.toggle(code);
    }
  }

  selection(): string[] {
    return [...this.selected];
  }

  has(code: string): boolean {
    return this.selected.includes(code);
  }

  /** Select or deselect; a fourth selection is blocked, not truncated. */
  toggle(code: string): ToggleResult {
    if (!isKnownCode(code)) {
      return { ok: false, blocked: `unknown code: ${code}` };
    }
    const at = this.selected.indexOf(code);
    if (at >= 0) {
      this.selected.splice(at, 1);
      return { ok: true, selected: this.selection() };
    }
    if (this.selected.length >= MAX_CODES) {
      return { ok: false, blocked: MAX_CODES_MESSAGE };
    }
    this.selected.push(code);
    return { ok: true, selected: this.selection() };
  }

  /** A submittable payload carries between one and three codes. */
  canSubmit(): boolean {
    return this.selected.length >= 1 && this.selected.length <= MAX_CODES;
  }

  reset(initial: Iterable<string> = []): void {
    this.selected = [];
    for (const code of initial) {
      this.toggle(code);
    }
  }
}
