import init, { Demo } from "./pkg/dyloc_web.js";

const $ = (id) => document.getElementById(id);
let demo = null;
let grid = null;

function toCanvas(canvas, x, y) {
  const [ox, oy, step, rows, cols] = grid;
  const w = canvas.width / cols, h = canvas.height / rows;
  return [((x - ox) / step + 0.5) * w, canvas.height - ((y - oy) / step + 0.5) * h];
}

function fromCanvas(canvas, px, py) {
  const [ox, oy, step, rows, cols] = grid;
  return [ox + (px / canvas.width * cols - 0.5) * step, oy + ((canvas.height - py) / canvas.height * rows - 0.5) * step];
}

function heat(v) {
  const t = Math.max(0, Math.min(1, v));
  return [Math.round(255 * Math.min(1, 2 * t)), Math.round(255 * t * t), Math.round(80 * (1 - t))];
}

function paint(canvas, values, rows, cols, flipRows) {
  const ctx = canvas.getContext("2d");
  const img = ctx.createImageData(cols, rows);
  const max = Math.max(...values) || 1;
  for (let r = 0; r < rows; r++) {
    for (let c = 0; c < cols; c++) {
      const [R, G, B] = heat(values[r * cols + c] / max);
      const o = ((flipRows ? rows - 1 - r : r) * cols + c) * 4;
      img.data.set([R, G, B, 255], o);
    }
  }
  const off = new OffscreenCanvas(cols, rows);
  off.getContext("2d").putImageData(img, 0, 0);
  ctx.imageSmoothingEnabled = false;
  ctx.drawImage(off, 0, 0, canvas.width, canvas.height);
}

function probe(x, y) {
  const [, , , rows, cols] = grid;
  paint($("map"), demo.similarity_map(x, y), rows, cols, true);
  const ctx = $("map").getContext("2d");
  const [px, py] = toCanvas($("map"), x, y);
  ctx.strokeStyle = "#fff";
  ctx.strokeRect(px - 4, py - 4, 8, 8);
  const [a, d] = demo.adp_dims();
  paint($("adp"), demo.adp_at(x, y), a, d, false);
  $("status").textContent = `(${x.toFixed(2)}, ${y.toFixed(2)}) m`;
}

function polyline(ctx, pts, color) {
  ctx.strokeStyle = color;
  ctx.fillStyle = color;
  ctx.beginPath();
  let pen = false;
  for (const [x, y] of pts) {
    if (Number.isNaN(x)) { pen = false; continue; }
    const [px, py] = toCanvas($("track"), x, y);
    pen ? ctx.lineTo(px, py) : ctx.moveTo(px, py);
    pen = true;
  }
  ctx.stroke();
  for (const [x, y] of pts) {
    if (Number.isNaN(x)) continue;
    const [px, py] = toCanvas($("track"), x, y);
    ctx.fillRect(px - 2, py - 2, 4, 4);
  }
}

function walk() {
  const out = demo.track($("scenario").value, Number($("seed").value) >>> 0);
  const frames = [];
  for (let i = 0; i < out.length; i += 7) frames.push(out.slice(i, i + 7));
  const canvas = $("track");
  const ctx = canvas.getContext("2d");
  ctx.fillStyle = "#f6f6f6";
  ctx.fillRect(0, 0, canvas.width, canvas.height);
  polyline(ctx, frames.map((f) => [f[0], f[1]]), "#222");
  polyline(ctx, frames.map((f) => [f[4], f[5]]), "#d33");
  polyline(ctx, frames.map((f) => [f[2], f[3]]), "#27c");
  const err = (f, i) => Math.hypot(f[i] - f[0], f[i + 1] - f[1]);
  const late = frames.slice(10);
  const mean = (i) => late.reduce((s, f) => s + (Number.isNaN(f[i]) ? 0 : err(f, i)), 0) / late.length;
  const flagged = frames.filter((f) => f[6] !== 0).length;
  $("summary").textContent =
    `${flagged} of ${frames.length} frames flagged. Mean error over the last ${late.length} frames: ` +
    `fingerprint match ${mean(4).toFixed(2)} m, tracked ${mean(2).toFixed(2)} m.`;
}

function load() {
  $("status").textContent = "building fingerprints...";
  setTimeout(() => {
    demo = new Demo($("env").value);
    grid = demo.grid();
    const [ox, oy, step, rows, cols] = grid;
    probe(ox + step * (cols / 2), oy + step * (rows / 2));
    walk();
  }, 0);
}

await init();
$("map").addEventListener("click", (e) => {
  const r = e.target.getBoundingClientRect();
  probe(...fromCanvas($("map"), e.clientX - r.left, e.clientY - r.top));
});
$("walk").addEventListener("click", walk);
$("env").addEventListener("change", load);
load();
