/**
 * Minimal standalone SVG plot builder (no DOM, no dependencies).
 * Supports linear/log axes, scatter with error bars, polylines, bars and
 * closed polygons; embeds provenance in <metadata> and the caption.
 */

export interface Scale {
  toPx(v: number): number;
  ticks(): number[];
  kind: "linear" | "log";
}

export function linearScale(lo: number, hi: number, pxLo: number, pxHi: number): Scale {
  const span = hi - lo || 1;
  return {
    kind: "linear",
    toPx: (v) => pxLo + ((v - lo) / span) * (pxHi - pxLo),
    ticks: () => {
      const step = niceStep(span / 5);
      const first = Math.ceil(lo / step) * step;
      const out: number[] = [];
      for (let t = first; t <= hi + 1e-12 * Math.abs(span); t += step) out.push(t);
      return out;
    },
  };
}

export function logScale(lo: number, hi: number, pxLo: number, pxHi: number): Scale {
  const llo = Math.log10(lo);
  const lhi = Math.log10(hi);
  const span = lhi - llo || 1;
  return {
    kind: "log",
    toPx: (v) => pxLo + ((Math.log10(v) - llo) / span) * (pxHi - pxLo),
    ticks: () => {
      const out: number[] = [];
      for (let e = Math.ceil(llo - 1e-9); e <= Math.floor(lhi + 1e-9); e++) {
        out.push(10 ** e);
      }
      if (out.length < 2) {
        out.length = 0;
        for (const m of [1, 2, 5]) {
          for (let e = Math.floor(llo) - 1; e <= Math.ceil(lhi) + 1; e++) {
            const t = m * 10 ** e;
            if (t >= lo * 0.999 && t <= hi * 1.001) out.push(t);
          }
        }
        out.sort((a, b) => a - b);
      }
      return out;
    },
  };
}

function niceStep(raw: number): number {
  const mag = 10 ** Math.floor(Math.log10(Math.abs(raw) || 1));
  const norm = raw / mag;
  const step = norm < 1.5 ? 1 : norm < 3.5 ? 2 : norm < 7.5 ? 5 : 10;
  return step * mag;
}

function esc(s: string): string {
  return s.replace(/&/g, "&amp;").replace(/</g, "&lt;").replace(/>/g, "&gt;");
}

function fmt(v: number): string {
  if (v === 0) return "0";
  const a = Math.abs(v);
  if (a >= 0.01 && a < 10000) return String(Number(v.toPrecision(4)));
  return v.toExponential(1);
}

const W = 640;
const H = 440;
const M = { left: 70, right: 20, top: 40, bottom: 70 };

export class Plot {
  private parts: string[] = [];
  readonly x: Scale;
  readonly y: Scale;

  constructor(
    readonly title: string,
    readonly configHash: string,
    xDomain: [number, number],
    yDomain: [number, number],
    opts: { xLog?: boolean; yLog?: boolean; xLabel?: string; yLabel?: string } = {},
  ) {
    this.x = (opts.xLog ? logScale : linearScale)(xDomain[0], xDomain[1], M.left, W - M.right);
    this.y = (opts.yLog ? logScale : linearScale)(yDomain[0], yDomain[1], H - M.bottom, M.top);
    this.axes(opts.xLabel ?? "", opts.yLabel ?? "");
  }

  private axes(xLabel: string, yLabel: string) {
    const p = this.parts;
    p.push(`<rect x="${M.left}" y="${M.top}" width="${W - M.left - M.right}" ` +
      `height="${H - M.top - M.bottom}" fill="none" stroke="#444"/>`);
    for (const t of this.x.ticks()) {
      const px = this.x.toPx(t);
      if (px < M.left - 0.5 || px > W - M.right + 0.5) continue;
      p.push(`<line x1="${px.toFixed(1)}" y1="${H - M.bottom}" x2="${px.toFixed(1)}" ` +
        `y2="${H - M.bottom + 5}" stroke="#444"/>`);
      p.push(`<text x="${px.toFixed(1)}" y="${H - M.bottom + 18}" font-size="11" ` +
        `text-anchor="middle">${fmt(t)}</text>`);
    }
    for (const t of this.y.ticks()) {
      const py = this.y.toPx(t);
      if (py < M.top - 0.5 || py > H - M.bottom + 0.5) continue;
      p.push(`<line x1="${M.left - 5}" y1="${py.toFixed(1)}" x2="${M.left}" ` +
        `y2="${py.toFixed(1)}" stroke="#444"/>`);
      p.push(`<text x="${M.left - 8}" y="${(py + 4).toFixed(1)}" font-size="11" ` +
        `text-anchor="end">${fmt(t)}</text>`);
    }
    p.push(`<text x="${(M.left + W - M.right) / 2}" y="${H - 30}" font-size="13" ` +
      `text-anchor="middle">${xLabel}</text>`);
    p.push(`<text x="18" y="${(M.top + H - M.bottom) / 2}" font-size="13" ` +
      `text-anchor="middle" transform="rotate(-90 18 ${(M.top + H - M.bottom) / 2})">` +
      `${esc(yLabel)}</text>`);
    p.push(`<text x="${W / 2}" y="24" font-size="15" text-anchor="middle">${esc(this.title)}</text>`);
  }

  points(xs: number[], ys: number[], color = "#1965b0", r = 3) {
    for (let i = 0; i < xs.length; i++) {
      this.parts.push(`<circle cx="${this.x.toPx(xs[i]).toFixed(1)}" ` +
        `cy="${this.y.toPx(ys[i]).toFixed(1)}" r="${r}" fill="${color}"/>`);
    }
  }

  errorBars(xs: number[], ys: number[], errs: number[], color = "#1965b0") {
    for (let i = 0; i < xs.length; i++) {
      const lo = ys[i] - errs[i];
      const hi = ys[i] + errs[i];
      if (this.y.kind === "log" && lo <= 0) continue;
      const px = this.x.toPx(xs[i]).toFixed(1);
      this.parts.push(`<line x1="${px}" y1="${this.y.toPx(lo).toFixed(1)}" x2="${px}" ` +
        `y2="${this.y.toPx(hi).toFixed(1)}" stroke="${color}" stroke-width="1"/>`);
    }
  }

  polyline(xs: number[], ys: number[], color = "#dc050c", width = 1.5, dash = "") {
    const pts = xs.map((x, i) =>
      `${this.x.toPx(x).toFixed(1)},${this.y.toPx(ys[i]).toFixed(1)}`).join(" ");
    const d = dash ? ` stroke-dasharray="${dash}"` : "";
    this.parts.push(`<polyline points="${pts}" fill="none" stroke="${color}" ` +
      `stroke-width="${width}"${d}/>`);
  }

  bars(lefts: number[], rights: number[], heights: number[], color = "#7bafde") {
    const y0 = this.y.toPx(0);
    for (let i = 0; i < lefts.length; i++) {
      const x0 = this.x.toPx(lefts[i]);
      const x1 = this.x.toPx(rights[i]);
      const y1 = this.y.toPx(heights[i]);
      this.parts.push(`<rect x="${x0.toFixed(1)}" y="${Math.min(y0, y1).toFixed(1)}" ` +
        `width="${(x1 - x0).toFixed(1)}" height="${Math.abs(y0 - y1).toFixed(1)}" ` +
        `fill="${color}" stroke="#444" stroke-width="0.5"/>`);
    }
  }

  polygon(xs: number[], ys: number[], stroke = "#4eb265", fill = "none") {
    const pts = xs.map((x, i) =>
      `${this.x.toPx(x).toFixed(1)},${this.y.toPx(ys[i]).toFixed(1)}`).join(" ");
    this.parts.push(`<polygon points="${pts}" fill="${fill}" stroke="${stroke}" ` +
      `stroke-width="1.5" stroke-linejoin="round"/>`);
  }

  legend(entries: { label: string; color: string }[]) {
    entries.forEach((e, i) => {
      const y = M.top + 16 + 16 * i;
      this.parts.push(`<rect x="${W - M.right - 160}" y="${y - 9}" width="10" height="10" ` +
        `fill="${e.color}"/>`);
      this.parts.push(`<text x="${W - M.right - 145}" y="${y}" font-size="11">${esc(e.label)}</text>`);
    });
  }

  render(caption: string): string {
    return [
      `<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 ${W} ${H}" ` +
        `font-family="sans-serif">`,
      `<metadata>{"config_hash": "${this.configHash}"}</metadata>`,
      `<rect width="${W}" height="${H}" fill="white"/>`,
      ...this.parts,
      `<text x="${W / 2}" y="${H - 8}" font-size="10" fill="#666" text-anchor="middle">` +
        `${esc(caption)} [config ${this.configHash}]</text>`,
      `</svg>`,
    ].join("\n");
  }
}
