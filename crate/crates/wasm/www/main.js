import init, { detection_map, nfa_table, capacity } from "./pkg/aiswatch_wasm.js";

const $ = (id) => document.getElementById(id);
const num = (id) => Number($(id).value);

function fail(outId, e) {
  const el = $(outId);
  el.className = "out err";
  el.textContent = String(e.message || e);
}

function say(outId, text) {
  const el = $(outId);
  el.className = "out";
  el.textContent = text;
}

const COLORS = { normal: "#888", abnormal: "#d22", "insufficient-data": "#e90" };

function drawMap() {
  let m;
  try {
    m = JSON.parse(detection_map(num("m-train"), num("m-clean"), num("m-anom"), num("m-q"), num("m-min"), num("m-seed")));
  } catch (e) {
    return fail("m-out", e);
  }
  const cv = $("m-canvas");
  const g = cv.getContext("2d");
  const { lat_min, lat_max, lon_min, lon_max } = m.roi;
  const sx = cv.width / (lon_max - lon_min);
  const sy = cv.height / (lat_max - lat_min);
  const px = (lon) => (lon - lon_min) * sx;
  const py = (lat) => cv.height - (lat - lat_min) * sy;
  g.clearRect(0, 0, cv.width, cv.height);

  const c = m.cell_size_deg;
  for (const cell of m.cells) {
    g.fillStyle = cell.validated ? "#cfe3cf" : "#eee";
    const x = px(lon_min + cell.col * c);
    const y = py(lat_min + (cell.row + 1) * c);
    g.fillRect(x, y, c * sx, c * sy);
  }

  // normal tracks underneath
  const order = [...m.tracks].sort((a, b) => (a.decision === "normal" ? -1 : 0) - (b.decision === "normal" ? -1 : 0));
  for (const t of order) {
    g.strokeStyle = COLORS[t.decision];
    g.lineWidth = t.decision === "normal" ? 1 : 2;
    g.setLineDash(t.truth ? [6, 4] : []);
    g.beginPath();
    t.path.forEach(([lat, lon], i) => (i ? g.lineTo(px(lon), py(lat)) : g.moveTo(px(lon), py(lat))));
    g.stroke();
    g.setLineDash([]);
    g.fillStyle = "#d22";
    t.path.forEach(([lat, lon], i) => {
      if (t.flags[i]) g.fillRect(px(lon) - 1.5, py(lat) - 1.5, 3, 3);
    });
  }

  const lines = [
    `injected anomalies detected: ${m.detected} / ${m.injected}`,
    `clean tracks flagged:        ${m.clean_flagged} / ${m.clean}`,
    `validated cells:             ${m.cells.filter((x) => x.validated).length} of ${m.cells.length} visited`,
    "",
    "abnormal tracks:",
  ];
  for (const t of m.tracks.filter((t) => t.decision !== "normal")) {
    lines.push(`  ${t.track_id}  ${t.decision.padEnd(17)} k=${t.k}/${t.n}  nfa=${t.nfa.toExponential(2)}  truth=${t.truth || "clean"}`);
  }
  say("m-out", lines.join("\n"));
}

function drawNfa() {
  let t;
  try {
    t = JSON.parse(nfa_table(num("n-n"), num("n-q"), num("n-m"), num("n-eps")));
  } catch (e) {
    return fail("n-out", e);
  }
  const cv = $("n-canvas");
  const g = cv.getContext("2d");
  g.clearRect(0, 0, cv.width, cv.height);
  const logs = t.rows.map((r) => (r.nfa > 0 ? Math.log10(r.nfa) : -320));
  const lo = Math.max(Math.min(...logs, Math.log10(t.epsilon)) - 1, -60);
  const hi = Math.max(...logs, Math.log10(t.epsilon)) + 1;
  const pad = 30;
  const x = (k) => pad + (k / t.n) * (cv.width - 2 * pad);
  const y = (v) => cv.height - pad - ((Math.max(v, lo) - lo) / (hi - lo)) * (cv.height - 2 * pad);

  g.strokeStyle = "#999";
  g.setLineDash([4, 4]);
  g.beginPath();
  g.moveTo(x(0), y(Math.log10(t.epsilon)));
  g.lineTo(x(t.n), y(Math.log10(t.epsilon)));
  g.stroke();
  g.setLineDash([]);
  t.rows.forEach((r, i) => {
    g.fillStyle = r.abnormal ? "#d22" : "#357";
    g.fillRect(x(r.k) - 2, y(logs[i]) - 2, 4, 4);
  });
  g.fillStyle = "#222";
  g.fillText("log10 NFA", 4, 12);
  g.fillText("k", cv.width - pad + 8, cv.height - pad);
  g.fillText(`${hi.toFixed(0)}`, 4, y(hi) + 4);
  g.fillText(`${lo.toFixed(0)}`, 4, y(lo));

  const k = t.min_abnormal_k;
  say(
    "n-out",
    k === null
      ? `no k makes a ${t.n}-point track abnormal at these settings`
      : `abnormal from k = ${k} of ${t.n} flagged points (${((100 * k) / t.n).toFixed(1)}%, vs q = ${t.q})`
  );
}

function drawCapacity() {
  let c;
  try {
    c = JSON.parse(capacity(num("c-v"), num("c-d"), num("c-w"), num("c-t"), num("c-s")));
  } catch (e) {
    return fail("c-out", e);
  }
  const cv = $("c-canvas");
  const g = cv.getContext("2d");
  g.clearRect(0, 0, cv.width, cv.height);
  const pad = 30;
  const maxX = Math.max(c.peak, 1);
  const x = (n) => pad + (n / maxX) * (cv.width - 2 * pad);
  const y = (f) => cv.height - pad - f * (cv.height - 2 * pad);
  g.strokeStyle = "#357";
  g.lineWidth = 2;
  g.beginPath();
  g.moveTo(x(0), y(0));
  let prev = 0;
  for (const [n, f] of c.cdf) {
    g.lineTo(x(n), y(prev));
    g.lineTo(x(n), y(f));
    prev = f;
  }
  g.stroke();
  g.fillStyle = "#222";
  g.fillText("fraction of windows", 4, 12);
  g.fillText(`unique MMSIs (peak ${c.peak})`, cv.width - 170, cv.height - 8);
  say(
    "c-out",
    [...c.readings, `${c.windows} windows of ${c.window_s} s`, `cores needed at peak: ${c.cores}`].join("\n")
  );
}

await init();
$("m-run").addEventListener("click", drawMap);
$("c-run").addEventListener("click", drawCapacity);
for (const id of ["n-n", "n-q", "n-m", "n-eps"]) $(id).addEventListener("input", drawNfa);
drawNfa();
drawMap();
drawCapacity();
