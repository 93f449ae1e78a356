import { ALL_CODES } from "./codes.js";
import type { AgreementResponse } from "./types.js";

export interface AgreementTableRow {
  code: string;
  alpha: string; // formatted, "undefined" for the undefined-alpha state
  units: number;
  positives: number;
}

/** Rows for the per-code alpha table, one per code plus a cumulative row.
 * All numbers come verbatim from the service; no score arithmetic here. */
export function agreementRows(reply: AgreementResponse): AgreementTableRow[] {
  const rows: AgreementTableRow[] = [];
  for (const code of ALL_CODES) {
    const entry = reply.per_code[code];
    if (!entry) {
      continue;
    }
    rows.push({
      code,
      alpha: entry.alpha === null ? "undefined" : entry.alpha.toFixed(3),
      units: entry.units_used,
      positives: entry.positives,
    });
  }
  rows.push({
    code: "Cumulative",
    alpha: reply.cumulative.alpha === null ? "undefined" : reply.cumulative.alpha.toFixed(3),
    units: reply.cumulative.units_used,
    positives: rows.reduce((sum, row) => sum + row.positives, 0),
  });
  return rows;
}
