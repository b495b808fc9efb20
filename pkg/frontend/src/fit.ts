/**
 * Weighted least squares for overlay fits.
 *
 * Deliberately the same definition as the producer of the CSVs: weights are
 * inverse squared relative errors, the regression runs on transformed
 * coordinates, and the slope error comes from the unscaled normal matrix.
 * Overlays are recomputed from the raw columns so they cross-check the
 * fitted numbers stored alongside the data.
 */

export interface LineFit {
  slope: number;
  intercept: number;
  slopeStderr: number;
  rSquared: number;
}

export interface PowerLawFit extends LineFit {
  amplitude: number;
  nPoints: number;
}

export function weightedLine(X: number[], Y: number[], W: number[]): LineFit {
  let S = 0;
  for (const w of W) S += w;
  let Sx = 0,
    Sy = 0,
    Sxx = 0,
    Sxy = 0;
  for (let i = 0; i < X.length; i++) {
    Sx += W[i] * X[i];
    Sy += W[i] * Y[i];
    Sxx += W[i] * X[i] * X[i];
    Sxy += W[i] * X[i] * Y[i];
  }
  const denom = Sxx - (Sx * Sx) / S;
  const slope = (Sxy - (Sx * Sy) / S) / denom;
  const intercept = (Sy - slope * Sx) / S;
  let ssRes = 0,
    ssTot = 0;
  const ybar = Sy / S;
  for (let i = 0; i < X.length; i++) {
    const r = Y[i] - (intercept + slope * X[i]);
    ssRes += W[i] * r * r;
    ssTot += W[i] * (Y[i] - ybar) * (Y[i] - ybar);
  }
  return {
    slope,
    intercept,
    slopeStderr: Math.sqrt(1 / denom),
    rSquared: ssTot === 0 ? 1 : 1 - ssRes / ssTot,
  };
}

function fitWeights(y: number[], stderr?: number[]): number[] {
  if (!stderr) return y.map(() => 1);
  const rel = y.map((v, i) => (stderr[i] > 0 ? stderr[i] / v : NaN));
  const finite = rel.filter((r) => Number.isFinite(r));
  const fallback = finite.length ? Math.max(...finite) : 1;
  return rel.map((r) => {
    const rr = Number.isFinite(r) ? r : Math.max(fallback, 1e-12);
    return 1 / (rr * rr);
  });
}

/** Fit y = A x^s on positive data; log-log coordinates, relative-error weights. */
export function fitPowerLaw(x: number[], y: number[], stderr?: number[]): PowerLawFit {
  if (x.length < 3) throw new Error("need at least 3 points");
  if (x.some((v) => v <= 0) || y.some((v) => v <= 0)) {
    throw new Error("power-law fit needs positive x and y");
  }
  const W = fitWeights(y, stderr);
  const line = weightedLine(x.map(Math.log), y.map(Math.log), W);
  return { ...line, amplitude: Math.exp(line.intercept), nPoints: x.length };
}

/** Fit y = A exp(-rate x); log-linear coordinates. */
export function fitExponential(x: number[], y: number[], stderr?: number[]): PowerLawFit {
  if (x.length < 3) throw new Error("need at least 3 points");
  if (y.some((v) => v <= 0)) throw new Error("exponential fit needs positive y");
  const W = fitWeights(y, stderr);
  const line = weightedLine(x, y.map(Math.log), W);
  return { ...line, amplitude: Math.exp(line.intercept), nPoints: x.length };
}
