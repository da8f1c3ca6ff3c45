import init, { gemm_sweep, pcie_compare, block_map } from "./pkg/matrixflow_web.js";

const $ = (id) => document.getElementById(id);
const DTYPES = ["int8", "int16", "int32", "fp16", "fp32"];
const CATS = [
  ["gemm_compute", "#3a7bd5"],
  ["data_transfer", "#f0a030"],
  ["control", "#c0392b"],
];

function call(out, f) {
  out.classList.remove("err");
  try {
    return JSON.parse(f());
  } catch (e) {
    out.textContent = String(e);
    out.classList.add("err");
    return null;
  }
}

function clear(canvas) {
  const ctx = canvas.getContext("2d");
  ctx.clearRect(0, 0, canvas.width, canvas.height);
  ctx.font = "12px system-ui, sans-serif";
  return ctx;
}

// stacked bars of time categories, speedup printed above each bar
function drawSweep(points) {
  const canvas = $("sw-canvas");
  const ctx = clear(canvas);
  const pad = 30, h = canvas.height - 2 * pad;
  const slot = (canvas.width - 2 * pad) / points.length;
  points.forEach((p, i) => {
    const x = pad + i * slot + slot * 0.2, bw = slot * 0.6;
    let y = canvas.height - pad;
    for (const [cat, color] of CATS) {
      const bh = (h * p.categories[cat]) / p.total_ns;
      ctx.fillStyle = color;
      ctx.fillRect(x, y - bh, bw, bh);
      y -= bh;
    }
    ctx.fillStyle = "#222";
    ctx.fillText(`${p.size}`, x, canvas.height - pad + 14);
    ctx.fillText(`${p.speedup.toFixed(1)}x`, x, pad - 8);
  });
  CATS.forEach(([cat, color], i) => {
    ctx.fillStyle = color;
    ctx.fillRect(canvas.width - 140, 8 + i * 16, 10, 10);
    ctx.fillStyle = "#222";
    ctx.fillText(cat, canvas.width - 124, 17 + i * 16);
  });
}

function drawLinks(points) {
  const canvas = $("pc-canvas");
  const ctx = clear(canvas);
  const max = Math.max(...points.map((p) => p.total_ns));
  const left = 140, bh = 36;
  points.forEach((p, i) => {
    const w = ((canvas.width - left - 120) * p.total_ns) / max;
    const y = 16 + i * (bh + 16);
    ctx.fillStyle = "#f0a030";
    ctx.fillRect(left, y, (w * p.data_transfer_ns) / p.total_ns, bh);
    ctx.fillStyle = "#3a7bd5";
    ctx.fillRect(left + (w * p.data_transfer_ns) / p.total_ns, y, w - (w * p.data_transfer_ns) / p.total_ns, bh);
    ctx.fillStyle = "#222";
    ctx.fillText(p.label, 8, y + bh / 2 + 4);
    ctx.fillText(`${(p.total_ns / 1e6).toFixed(3)} ms`, left + w + 8, y + bh / 2 + 4);
  });
}

function drawMap(map) {
  const canvas = $("bm-canvas");
  const ctx = clear(canvas);
  const scale = Math.min((canvas.width - 2) / map.padded_cols, (canvas.height - 2) / map.padded_rows);
  const n = map.pages.length;
  for (const p of map.pages) {
    ctx.fillStyle = `hsl(${(p.page * 360) / Math.max(n, 1)}, 60%, 70%)`;
    ctx.fillRect(1 + p.col0 * scale, 1 + p.row0 * scale, p.cols * scale, p.rows * scale);
    ctx.strokeStyle = "#fff";
    ctx.strokeRect(1 + p.col0 * scale, 1 + p.row0 * scale, p.cols * scale, p.rows * scale);
    if (p.cols * scale > 18 && p.rows * scale > 14) {
      ctx.fillStyle = "#222";
      ctx.fillText(String(p.page), 4 + p.col0 * scale, 13 + p.row0 * scale);
    }
  }
  const rows = Number($("bm-rows").value), cols = Number($("bm-cols").value);
  ctx.strokeStyle = "#222";
  ctx.strokeRect(1, 1, cols * scale, rows * scale);
}

function runSweep() {
  const out = $("sw-out");
  const pts = call(out, () => gemm_sweep($("sw-sizes").value, $("sw-dtype").value, $("sw-mode").value));
  if (!pts) return;
  drawSweep(pts);
  out.textContent = pts.map((p) => `${p.size}\t${p.total_ns} ns\t${p.speedup.toFixed(2)}x\t${p.bytes_moved} B`).join("\n");
}

function runLinks() {
  const out = $("pc-out");
  const pts = call(out, () => pcie_compare(Number($("pc-size").value), $("pc-dtype").value, $("pc-mode").value));
  if (!pts) return;
  drawLinks(pts);
  out.textContent = pts.map((p) => `${p.label}\t${p.total_ns} ns\t${p.speedup.toFixed(2)}x`).join("\n");
}

function runMap() {
  const out = $("bm-out");
  const map = call(out, () =>
    block_map(Number($("bm-rows").value), Number($("bm-cols").value), $("bm-dtype").value, $("bm-op").value),
  );
  if (!map) return;
  drawMap(map);
  out.textContent = `block ${map.w}x${map.l}, grid ${map.grid[0]}x${map.grid[1]}, ${map.pages.length} pages, padded to ${map.padded_rows}x${map.padded_cols}`;
}

await init();
for (const sel of document.querySelectorAll("select.dtype")) {
  for (const d of DTYPES) sel.add(new Option(d, d));
}
$("sw-run").onclick = runSweep;
$("pc-run").onclick = runLinks;
$("bm-run").onclick = runMap;
runSweep();
runLinks();
runMap();
