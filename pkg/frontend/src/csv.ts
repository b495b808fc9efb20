/**
 * Reader for the simulation output tables: one JSON metadata line followed
 * by a CSV header and numeric rows.
 */

import { readFileSync } from "fs";

export interface Table {
  metadata: Record<string, unknown>;
  columns: Record<string, (number | string)[]>;
  nRows: number;
}

export function parseTable(text: string): Table {
  const lines = text.split("\n").filter((l) => l.length > 0);
  if (lines.length < 2) {
    throw new Error("not a table: missing metadata or header line");
  }
  const metadata = JSON.parse(lines[0]) as Record<string, unknown>;
  const header = lines[1].split(",");
  const columns: Record<string, (number | string)[]> = {};
  for (const h of header) columns[h] = [];
  for (const line of lines.slice(2)) {
    const toks = line.split(",");
    header.forEach((h, i) => {
      const tok = toks[i];
      const num = Number(tok);
      columns[h].push(tok !== "" && Number.isFinite(num) ? num : tok);
    });
  }
  return { metadata, columns, nRows: lines.length - 2 };
}

export function readTable(path: string): Table {
  return parseTable(readFileSync(path, "utf8"));
}

export function numbers(table: Table, column: string): number[] {
  const col = table.columns[column];
  if (col === undefined) {
    throw new Error(`missing column '${column}'`);
  }
  return col.map((v) => {
    if (typeof v !== "number") throw new Error(`non-numeric value in '${column}'`);
    return v;
  });
}

export function experimentTag(table: Table): string {
  const tag = table.metadata["experiment"];
  if (typeof tag !== "string") throw new Error("metadata has no experiment tag");
  return tag;
}
