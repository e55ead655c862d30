import init, { detect_change_points, robust_zscores, diagnose_scenario } from "./pkg/rca_wasm.js";

const $ = (id) => document.getElementById(id);

function numbers(text) {
  return Float64Array.from(text.trim().split(/[\s,]+/).filter(Boolean).map(Number));
}

function fail(el, err) {
  el.className = "error";
  el.textContent = String(err.message ?? err);
}

function ok(el, text) {
  el.className = "";
  el.textContent = text;
}

function plot(svg, values, cuts) {
  const w = 600, h = 160, pad = 8;
  const lo = Math.min(...values), hi = Math.max(...values);
  const x = (i) => pad + (i * (w - 2 * pad)) / Math.max(values.length - 1, 1);
  const y = (v) => h - pad - ((v - lo) * (h - 2 * pad)) / (hi - lo || 1);
  const line = Array.from(values, (v, i) => `${x(i)},${y(v)}`).join(" ");
  const marks = Array.from(cuts, (c) =>
    `<line x1="${x(c - 0.5)}" x2="${x(c - 0.5)}" y1="0" y2="${h}" stroke="#d33" stroke-dasharray="4 3"/>`).join("");
  svg.innerHTML = `<polyline points="${line}" fill="none" stroke="#246" stroke-width="1.5"/>${marks}`;
}

function runChangePoints() {
  const out = $("cp-out");
  try {
    const values = numbers($("cp-values").value);
    const cuts = detect_change_points(values, Number($("cp-penalty").value), Number($("cp-min").value));
    plot($("cp-plot"), values, cuts);
    ok(out, cuts.length ? `segments start at ${Array.from(cuts).join(", ")}` : "no change points");
  } catch (e) {
    fail(out, e);
  }
}

function runZScores() {
  const out = $("z-out");
  try {
    const r = JSON.parse(robust_zscores(numbers($("z-values").value), Number($("z-threshold").value)));
    const rows = r.z.map((z, i) => `${String(i).padStart(3)}  z=${z.toFixed(2)}${r.flagged.includes(i) ? "  <- anomalous" : ""}`);
    ok(out, `median ${r.median}, MAD ${r.mad}\n` + rows.join("\n"));
  } catch (e) {
    fail(out, e);
  }
}

function runDiagnosis() {
  const out = $("d-out");
  try {
    const r = JSON.parse(diagnose_scenario(
      $("d-target").value,
      $("d-kind").value,
      Number($("d-magnitude").value),
      $("d-visible").checked,
      $("d-strategy").value,
      BigInt($("d-seed").value || 0),
    ));
    const d = r.diagnosis;
    const steps = d.reasoning_trace.map((s) => `  ${s.step}. ${s.action}: ${s.observation}`).join("\n");
    const verdict = d.component === r.truth.component ? "matches" : "differs from";
    ok(out, `component: ${d.component} (${verdict} injected ${r.truth.component})\nreason: ${d.reason}\n${steps}`);
    $("d-context").textContent = r.context;
  } catch (e) {
    fail(out, e);
    $("d-context").textContent = "";
  }
}

const typicalMagnitude = {
  rrt_spike: 20000,
  error_status: 0.5,
  cpu_stress: 95,
  req_resp_mismatch: 0.3,
  pod_crash: 1,
  log_burst: 40,
};

await init();
$("d-kind").addEventListener("change", () => {
  $("d-magnitude").value = typicalMagnitude[$("d-kind").value];
});
$("cp-run").addEventListener("click", runChangePoints);
$("z-run").addEventListener("click", runZScores);
$("d-run").addEventListener("click", runDiagnosis);
runChangePoints();
runZScores();
