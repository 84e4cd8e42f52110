// Build the package first: wasm-pack build crates/wasm --target web --out-dir www/pkg
import init, { effectSize, forestPlot, bayesDensity } from "./pkg/trialbench_wasm.js";

const $ = (id) => document.getElementById(id);
const fmt = (v) => (Number.isFinite(v) ? v.toFixed(3) : "n/a");

function showError(target, e) {
  target.innerHTML = "";
  const p = document.createElement("p");
  p.className = "error";
  p.textContent = String(e);
  target.appendChild(p);
}

function table(rows) {
  return "<table>" + rows.map((r) => "<tr>" + r.map((c) => `<td>${c}</td>`).join("") + "</tr>").join("") + "</table>";
}

function updateEffect() {
  const out = $("effect-out");
  try {
    const r = JSON.parse(
      effectSize(+$("e1").value, +$("n1").value, +$("e2").value, +$("n2").value, $("effect-scale").value),
    );
    if (r.excluded) {
      out.textContent = `not estimable: ${r.excluded}`;
      return;
    }
    const rows = [
      ["estimate", fmt(r.y)],
      ["standard error", fmt(r.se)],
      ["95% CI", `${fmt(r.ci_low)} to ${fmt(r.ci_high)}`],
    ];
    if (r.natural) rows.push(["exponentiated", `${fmt(r.natural[0])} (${fmt(r.natural[1])} to ${fmt(r.natural[2])})`]);
    out.innerHTML = table(rows);
  } catch (e) {
    showError(out, e);
  }
}

function updateForest() {
  try {
    const r = JSON.parse(forestPlot($("rows").value, $("rows-scale").value, $("method").value));
    const s = r.summary;
    $("forest-summary").innerHTML = table([
      ["pooled", fmt(s.y), `95% CI ${fmt(s.ci_low)} to ${fmt(s.ci_high)}`],
      ["z", fmt(s.z), `p ${fmt(s.p)}`],
      ["I² (%)", fmt(s.i2), `τ² ${fmt(s.tau2)}`],
    ]);
    $("forest-svg").innerHTML = r.svg;
  } catch (e) {
    $("forest-svg").innerHTML = "";
    showError($("forest-summary"), e);
  }
}

function updateBayes() {
  try {
    const r = JSON.parse(bayesDensity($("rows").value, $("rows-scale").value, $("prior-mu").value, $("prior-tau").value));
    const s = r.summary;
    $("bayes-summary").innerHTML = table([
      ["BF10 fixed", fmt(s.bf10_fixed)],
      ["BF10 random", fmt(s.bf10_random)],
      ["BF rf", fmt(s.bf_rf)],
      ["BF10 inclusion", fmt(s.bf_inclusion)],
      ["averaged μ", `${fmt(s.mean)} (95% CrI ${fmt(s.ci_low)} to ${fmt(s.ci_high)})`],
    ]);
    $("bayes-svg").innerHTML = r.svg;
  } catch (e) {
    $("bayes-svg").innerHTML = "";
    showError($("bayes-summary"), e);
  }
}

function debounce(fn, ms) {
  let t;
  return () => {
    clearTimeout(t);
    t = setTimeout(fn, ms);
  };
}

await init();
const studies = debounce(() => {
  updateForest();
  updateBayes();
}, 300);
for (const id of ["e1", "n1", "e2", "n2", "effect-scale"]) $(id).addEventListener("input", updateEffect);
for (const id of ["rows", "rows-scale"]) $(id).addEventListener("input", studies);
$("method").addEventListener("input", updateForest);
for (const id of ["prior-mu", "prior-tau"]) $(id).addEventListener("input", debounce(updateBayes, 300));
updateEffect();
updateForest();
updateBayes();
