import init, { gaitFrames, skeletonEdges, exploreVotes, rerankHeatmap } from "./pkg/skelreid_demo.js";

const JOINTS = 33;
const FRAMES = 160;
const FPS = 16;
const $ = (id) => document.getElementById(id);
const num = (id) => Number($(id).value);

function guard(errId, fn) {
  try {
    $(errId).textContent = "";
    fn();
  } catch (e) {
    $(errId).textContent = String(e.message ?? e);
  }
}

// Gait playback -------------------------------------------------------------

let timer = null;

function drawPose(canvas, coords, frame, edges, axis) {
  const ctx = canvas.getContext("2d");
  ctx.clearRect(0, 0, canvas.width, canvas.height);
  const base = frame * JOINTS * 3;
  const scale = canvas.height / 2.2;
  const px = (j) => canvas.width / 2 + scale * coords[base + 3 * j + axis];
  const py = (j) => canvas.height * 0.12 - scale * coords[base + 3 * j + 1];
  ctx.strokeStyle = "#345";
  ctx.lineWidth = 2;
  for (let e = 0; e < edges.length; e += 2) {
    ctx.beginPath();
    ctx.moveTo(px(edges[e]), py(edges[e]));
    ctx.lineTo(px(edges[e + 1]), py(edges[e + 1]));
    ctx.stroke();
  }
  ctx.fillStyle = "#c33";
  for (let j = 0; j < JOINTS; j++) {
    ctx.fillRect(px(j) - 2, py(j) - 2, 4, 4);
  }
}

function runGait() {
  guard("g-err", () => {
    const coords = gaitFrames(num("g-seed"), num("g-id"), FRAMES, num("g-noise"));
    const edges = skeletonEdges();
    let frame = 0;
    clearInterval(timer);
    timer = setInterval(() => {
      drawPose($("g-side"), coords, frame, edges, 2);
      drawPose($("g-front"), coords, frame, edges, 0);
      frame = (frame + 1) % FRAMES;
    }, 1000 / FPS);
  });
}

// Re-voting -----------------------------------------------------------------

function runVotes() {
  guard("v-err", () => {
    const rows = $("v-ranks").value.trim().split("\n").map((l) => l.trim().split(/[\s,]+/).map(Number));
    const ids = rows[0].length;
    const flat = new Uint32Array(rows.flat());
    const out = JSON.parse(exploreVotes(flat, ids, $("v-method").value, num("v-k")));
    const table = $("v-out");
    table.innerHTML = "<tr><th>place</th><th>identity</th><th>score</th></tr>";
    out.order.forEach((id, place) => {
      const tr = table.insertRow();
      tr.insertCell().textContent = place + 1;
      tr.insertCell().textContent = out.identities[id];
      tr.insertCell().textContent = out.scores[id].toFixed(4);
    });
  });
}

// Re-ranking heatmap ----------------------------------------------------------

function drawHeatmap(canvas, values, rows, cols, rowOrder, colOrder, max) {
  const ctx = canvas.getContext("2d");
  const w = canvas.width / cols;
  const h = canvas.height / rows;
  rowOrder.forEach((r, i) => {
    colOrder.forEach((c, j) => {
      const shade = Math.round(255 * Math.min(1, values[r * cols + c] / max));
      ctx.fillStyle = `rgb(${shade},${shade},255)`;
      ctx.fillRect(j * w, i * h, Math.ceil(w), Math.ceil(h));
    });
  });
}

function runRerank() {
  guard("r-err", () => {
    const m = JSON.parse(
      rerankHeatmap(num("r-clusters"), num("r-per"), num("r-spread"), num("r-k1"), num("r-k2"), num("r-lambda"), num("r-seed")),
    );
    const byCluster = (labels) => labels.map((c, i) => [c, i]).sort((a, b) => a[0] - b[0] || a[1] - b[1]).map((p) => p[1]);
    const rowOrder = byCluster(m.row_cluster);
    const colOrder = byCluster(m.col_cluster);
    const max = Math.max(...m.original, ...m.reranked, 1e-12);
    drawHeatmap($("r-orig"), m.original, m.rows, m.cols, rowOrder, colOrder, max);
    drawHeatmap($("r-rr"), m.reranked, m.rows, m.cols, rowOrder, colOrder, max);
  });
}

await init();
$("g-run").onclick = runGait;
$("v-run").onclick = runVotes;
$("r-run").onclick = runRerank;
runGait();
runVotes();
runRerank();
