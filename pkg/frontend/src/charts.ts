import type { CurvePoint } from "./state.js";

/** Minimal dependency-free line chart onto a canvas. */
export function drawCurve(
  canvas: HTMLCanvasElement,
  points: readonly CurvePoint[],
  pick: (p: CurvePoint) => number | null,
  color: string,
  yMax?: number,
): void {
  const ctx = canvas.getContext("2d");
  if (!ctx) {
    return;
  }
  const w = canvas.width;
  const h = canvas.height;
  ctx.clearRect(0, 0, w, h);
  ctx.strokeStyle = "#445";
  ctx.strokeRect(0.5, 0.5, w - 1, h - 1);

  const xs = points.map((p) => p.labelsUsed);
  const ys = points.map(pick).filter((v): v is number => v !== null);
  if (!xs.length || !ys.length) {
    return;
  }
  const xMax = Math.max(...xs, 1);
  const top = yMax ?? Math.max(...ys, 1);
  const pad = 4;

  ctx.strokeStyle = color;
  ctx.lineWidth = 1.5;
  ctx.beginPath();
  let started = false;
  for (const p of points) {
    const v = pick(p);
    if (v === null) {
      continue;
    }
    const x = pad + (p.labelsUsed / xMax) * (w - 2 * pad);
    const y = h - pad - (v / top) * (h - 2 * pad);
    if (started) {
      ctx.lineTo(x, y);
    } else {
      ctx.moveTo(x, y);
      started = true;
    }
  }
  ctx.stroke();
}
