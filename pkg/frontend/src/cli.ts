#!/usr/bin/env node
/**
 * Batch figure generation:
 *
 *   node dist/cli.js <kind> <input.csv|input.json> <output.svg> [--no-fit]
 *
 * Kinds: tau-decay, theta-scaling, m-histogram, cutoff-removal,
 * crossing-tail, near-critical-curves, loop-gallery.
 */

import { FigureKind, render } from "./figures.js";

const KINDS: FigureKind[] = [
  "tau-decay", "theta-scaling", "m-histogram", "cutoff-removal",
  "crossing-tail", "near-critical-curves", "loop-gallery",
];

function main(argv: string[]): number {
  const args = argv.filter((a) => a !== "--no-fit");
  const fitOverlay = !argv.includes("--no-fit");
  if (args.length < 3) {
    console.error("usage: cli.js <kind> <input> <output.svg> [--no-fit]");
    console.error(`kinds: ${KINDS.join(", ")}`);
    return 1;
  }
  const [kind, input, output] = args;
  if (!KINDS.includes(kind as FigureKind)) {
    console.error(`unknown figure kind '${kind}'; expected one of ${KINDS.join(", ")}`);
    return 1;
  }
  try {
    const result = render({ kind: kind as FigureKind, inputs: [input], output, fitOverlay });
    if (result.refit) {
      console.log(`wrote ${output} (refit slope ${result.refit.slope})`);
    } else {
      console.log(`wrote ${output}`);
    }
    return 0;
  } catch (err) {
    console.error(String(err instanceof Error ? err.message : err));
    return 1;
  }
}

process.exit(main(process.argv.slice(2)));
