/**
 * Figure rendering from simulation output tables.
 *
 * Each figure kind declares which experiment's files it accepts and refuses
 * anything else by tag.  Power-law and geometric-decay overlays are
 * recomputed here from the raw columns (same weighted-least-squares
 * definition as the producer), never copied from the stored fit rows, so a
 * figure is an independent cross-check of the analysis.
 */

import { readFileSync, writeFileSync, mkdirSync } from "fs";
import { dirname } from "path";

import { Table, experimentTag, numbers, readTable } from "./csv.js";
import { PowerLawFit, fitExponential, fitPowerLaw } from "./fit.js";
import { Plot } from "./svg.js";

export type FigureKind =
  | "tau-decay"
  | "theta-scaling"
  | "m-histogram"
  | "cutoff-removal"
  | "crossing-tail"
  | "near-critical-curves"
  | "loop-gallery";

export interface FigureSpec {
  kind: FigureKind;
  inputs: string[];
  output: string;
  fitOverlay?: boolean; // default true where a fit is defined
}

export interface RenderResult {
  svg: string;
  refit?: PowerLawFit;
}

const EXPECTED_TAG: Record<FigureKind, string[]> = {
  "tau-decay": ["two-point"],
  "theta-scaling": ["theta-scaling"],
  "m-histogram": ["field-dist"],
  "cutoff-removal": ["cutoff-removal"],
  "crossing-tail": ["crossings"],
  "near-critical-curves": ["near-critical", "free-energy"],
  "loop-gallery": ["loop-validate"],
};

function checkTag(kind: FigureKind, table: Table): void {
  const tag = experimentTag(table);
  if (!EXPECTED_TAG[kind].includes(tag)) {
    throw new Error(
      `experiment tag mismatch: figure '${kind}' expects ` +
        `${EXPECTED_TAG[kind].map((t) => `'${t}'`).join(" or ")}, got '${tag}'`,
    );
  }
  if (table.nRows === 0) {
    throw new Error(`empty table body for figure '${kind}'; nothing to draw`);
  }
}

function hashOf(table: { metadata: Record<string, unknown> }): string {
  return String(table.metadata["config_hash"] ?? "unknown");
}

function span(v: number[], padFactor = 1.15): [number, number] {
  const lo = Math.min(...v);
  const hi = Math.max(...v);
  return [lo / padFactor, hi * padFactor];
}

function overlayCurve(fit: PowerLawFit, xs: number[], log: boolean): [number[], number[]] {
  const lo = Math.min(...xs);
  const hi = Math.max(...xs);
  const n = 60;
  const gx: number[] = [];
  for (let i = 0; i <= n; i++) {
    gx.push(log ? lo * (hi / lo) ** (i / n) : lo + ((hi - lo) * i) / n);
  }
  const gy = gx.map((x) => (log ? fit.amplitude * x ** fit.slope
    : fit.amplitude * Math.exp(fit.slope * x)));
  return [gx, gy];
}

function powerLawFigure(
  kind: FigureKind, table: Table, xcol: string, ycol: string, ecol: string,
  title: string, xLabel: string, yLabel: string, overlay: boolean,
  windowKey?: string,
): RenderResult {
  checkTag(kind, table);
  const x = numbers(table, xcol);
  const y = numbers(table, ycol);
  const e = numbers(table, ecol);
  const keep = y.map((v) => v > 0);
  const xs = x.filter((_, i) => keep[i]);
  const ys = y.filter((_, i) => keep[i]);
  const es = e.filter((_, i) => keep[i]);

  let fitXs = xs, fitYs = ys, fitEs = es;
  const win = windowKey ? (table.metadata[windowKey] as number[] | undefined) : undefined;
  if (win) {
    const inWin = xs.map((v) => v >= win[0] && v <= win[1]);
    fitXs = xs.filter((_, i) => inWin[i]);
    fitYs = ys.filter((_, i) => inWin[i]);
    fitEs = es.filter((_, i) => inWin[i]);
  }
  const refit = fitXs.length >= 3 ? fitPowerLaw(fitXs, fitYs, fitEs) : undefined;

  const plot = new Plot(title, hashOf(table), span(xs), span(ys),
    { xLog: true, yLog: true, xLabel, yLabel });
  plot.errorBars(xs, ys, es);
  plot.points(xs, ys);
  if (overlay && refit) {
    const [gx, gy] = overlayCurve(refit, fitXs, true);
    plot.polyline(gx, gy);
    plot.legend([
      { label: "data", color: "#1965b0" },
      { label: `refit slope ${refit.slope.toFixed(4)}`, color: "#dc050c" },
    ]);
  }
  const svg = plot.render(`${title}; slope refit from raw columns`);
  return { svg, refit };
}

export function renderTauDecay(table: Table, overlay = true): RenderResult {
  return powerLawFigure("tau-decay", table, "r", "tau", "stderr",
    "Pair connectivity decay", "r", "tau(r)", overlay, "fit_window");
}

export function renderThetaScaling(table: Table, overlay = true): RenderResult {
  return powerLawFigure("theta-scaling", table, "L", "theta_inv_sq", "stderr",
    "Block pair-sum growth", "L", "theta^-2", overlay);
}

export function renderCutoffRemoval(table: Table, overlay = true): RenderResult {
  return powerLawFigure("cutoff-removal", table, "epsilon", "coupled_gap_sq", "stderr",
    "Coupled cutoff gap", "epsilon", "E|Phi - Phi_eps|^2", overlay);
}

export function renderMHistogram(table: Table): RenderResult {
  checkTag("m-histogram", table);
  const values = numbers(table, "value");
  const n = values.length;
  const mean = values.reduce((a, b) => a + b, 0) / n;
  const sd = Math.sqrt(values.reduce((a, b) => a + (b - mean) ** 2, 0) / n);
  const lo = Math.min(...values);
  const hi = Math.max(...values);
  const nBins = Math.max(12, Math.round(Math.sqrt(n) / 2));
  const width = (hi - lo) / nBins || 1;
  const counts = new Array<number>(nBins).fill(0);
  for (const v of values) {
    const b = Math.min(nBins - 1, Math.floor((v - lo) / width));
    counts[b] += 1;
  }
  const density = counts.map((c) => c / (n * width));
  const plot = new Plot("Block magnetization law", hashOf(table),
    [lo - width, hi + width], [0, Math.max(...density) * 1.2],
    { xLabel: "M", yLabel: "density" });
  plot.bars(
    density.map((_, i) => lo + i * width),
    density.map((_, i) => lo + (i + 1) * width),
    density,
  );
  // Gaussian with the sample mean and variance, for the non-Gaussianity contrast
  const gx: number[] = [];
  const gy: number[] = [];
  for (let i = 0; i <= 120; i++) {
    const x = lo - width + ((hi - lo + 2 * width) * i) / 120;
    gx.push(x);
    gy.push(Math.exp(-((x - mean) ** 2) / (2 * sd * sd)) / (sd * Math.sqrt(2 * Math.PI)));
  }
  plot.polyline(gx, gy);
  plot.legend([
    { label: "samples", color: "#7bafde" },
    { label: "Gaussian (same mean, var)", color: "#dc050c" },
  ]);
  return { svg: plot.render("Histogram with matched-moment Gaussian overlay") };
}

export function renderCrossingTail(table: Table, overlay = true): RenderResult {
  checkTag("crossing-tail", table);
  const k = numbers(table, "k");
  const survival = numbers(table, "survival");
  const err = numbers(table, "stderr");
  const nSamples = Number(table.metadata["n_samples"] ?? NaN);
  const keep = survival.map((s, i) => s > 0 && k[i] >= 1);
  const ks = k.filter((_, i) => keep[i]);
  const ss = survival.filter((_, i) => keep[i]);
  const es = err.filter((_, i) => keep[i]);
  // refit over k with enough tail events, from raw columns only
  const fitK = ks.filter((_, i) => !Number.isFinite(nSamples) || ss[i] * nSamples >= 50);
  const fitS = ss.filter((_, i) => !Number.isFinite(nSamples) || ss[i] * nSamples >= 50);
  const fitE = es.filter((_, i) => !Number.isFinite(nSamples) || ss[i] * nSamples >= 50);
  const refit = fitK.length >= 2
    ? fitExponential(fitK.length >= 3 ? fitK : ks, fitK.length >= 3 ? fitS : ss,
        fitK.length >= 3 ? fitE : es)
    : undefined;
  const plot = new Plot("Crossing-cluster count tail", hashOf(table),
    [0, Math.max(...k) + 0.5], span(ss.concat([1])), { yLog: true, xLabel: "k",
      yLabel: "P(N >= k)" });
  plot.errorBars(k.filter((_, i) => survival[i] > 0), survival.filter((s) => s > 0),
    err.filter((_, i) => survival[i] > 0));
  plot.points(k.filter((_, i) => survival[i] > 0), survival.filter((s) => s > 0));
  if (overlay && refit) {
    const [gx, gy] = overlayCurve(refit, fitK.length >= 3 ? fitK : ks, false);
    plot.polyline(gx, gy);
    plot.legend([
      { label: "survival", color: "#1965b0" },
      { label: `lambda ${Math.exp(refit.slope).toFixed(3)}`, color: "#dc050c" },
    ]);
  }
  return { svg: plot.render("Geometric-decay consistency check"), refit };
}

export function renderNearCriticalCurves(table: Table): RenderResult {
  checkTag("near-critical-curves", table);
  const tag = experimentTag(table);
  if (tag === "near-critical") {
    const H = numbers(table, "lattice_field");
    const m = numbers(table, "mean_spin");
    const e = numbers(table, "stderr");
    const keep = m.map((v, i) => v > 0 && H[i] > 0);
    const xs = H.filter((_, i) => keep[i]);
    const ys = m.filter((_, i) => keep[i]);
    const es = e.filter((_, i) => keep[i]);
    const refit = xs.length >= 3 ? fitPowerLaw(xs, ys, es) : undefined;
    const plot = new Plot("Magnetization vs field", hashOf(table), span(xs), span(ys),
      { xLog: true, yLog: true, xLabel: "H", yLabel: "<S>" });
    plot.errorBars(xs, ys, es);
    plot.points(xs, ys);
    if (refit) {
      const [gx, gy] = overlayCurve(refit, xs, true);
      plot.polyline(gx, gy);
      plot.legend([
        { label: "data", color: "#1965b0" },
        { label: `refit slope ${refit.slope.toFixed(4)}`, color: "#dc050c" },
      ]);
    }
    return { svg: plot.render("Field response curve"), refit };
  }
  const t = numbers(table, "t");
  const f = numbers(table, "f_hat");
  const fe = numbers(table, "f_hat_stderr");
  const plot = new Plot("Free-energy density", hashOf(table),
    [0, Math.max(...t) * 1.05], [0, Math.max(...f) * 1.15],
    { xLabel: "h", yLabel: "f(h)" });
  plot.errorBars(t, f, fe);
  plot.polyline(t, f, "#1965b0");
  plot.points(t, f);
  return { svg: plot.render("Thermodynamic-integration free energy") };
}

interface LoopCase {
  side_sites: number;
  spacing: number;
  sites: [number, number][];
  loops: { cluster: number; length: number; vertices: [number, number][] }[];
}

export function renderLoopGallery(payload: Record<string, unknown>,
                                  caseName?: string): RenderResult {
  if (payload["experiment"] !== "loop-validate") {
    throw new Error(
      `experiment tag mismatch: figure 'loop-gallery' expects 'loop-validate', ` +
        `got '${String(payload["experiment"])}'`,
    );
  }
  const cases = payload["cases"] as Record<string, LoopCase>;
  const name = caseName ?? (cases["random"] ? "random" : Object.keys(cases)[0]);
  const c = cases[name];
  if (!c) throw new Error(`no such loop case '${name}'`);
  const a = c.spacing;
  const ext = (c.side_sites - 1) * a;
  const pad = a;
  const plot = new Plot(`Cluster boundary loops (${name})`,
    String(payload["config_hash"] ?? "unknown"),
    [-pad, ext + pad], [-pad, ext + pad],
    { xLabel: "x", yLabel: "y" });
  const palette = ["#4eb265", "#dc050c", "#1965b0", "#f7a35c", "#882e72", "#777"];
  c.loops.forEach((loop, i) => {
    plot.polygon(loop.vertices.map((v) => v[0]), loop.vertices.map((v) => v[1]),
      palette[i % palette.length]);
  });
  plot.points(c.sites.map((s) => s[0]), c.sites.map((s) => s[1]), "#222", 2.5);
  return { svg: plot.render(`${c.loops.length} loops around the clusters of one sample`) };
}

export function render(spec: FigureSpec): RenderResult {
  const overlay = spec.fitOverlay !== false;
  let result: RenderResult;
  switch (spec.kind) {
    case "tau-decay":
      result = renderTauDecay(readTable(spec.inputs[0]), overlay);
      break;
    case "theta-scaling":
      result = renderThetaScaling(readTable(spec.inputs[0]), overlay);
      break;
    case "cutoff-removal":
      result = renderCutoffRemoval(readTable(spec.inputs[0]), overlay);
      break;
    case "m-histogram":
      result = renderMHistogram(readTable(spec.inputs[0]));
      break;
    case "crossing-tail":
      result = renderCrossingTail(readTable(spec.inputs[0]), overlay);
      break;
    case "near-critical-curves":
      result = renderNearCriticalCurves(readTable(spec.inputs[0]));
      break;
    case "loop-gallery":
      result = renderLoopGallery(
        JSON.parse(readFileSync(spec.inputs[0], "utf8")) as Record<string, unknown>);
      break;
    default:
      throw new Error(`unknown figure kind '${String(spec.kind)}'`);
  }
  mkdirSync(dirname(spec.output), { recursive: true });
  writeFileSync(spec.output, result.svg);
  return result;
}
