import init, { synthesize, weightCurve, Demo } from "./pkg/relabel_web.js";

const $ = (id) => document.getElementById(id);

function showError(target, err) {
  target.textContent = `error: ${err.message ?? err}`;
}

function renderSynthetic() {
  const out = $("syn-out");
  out.replaceChildren();
  try {
    for (const row of JSON.parse(synthesize($("syn-name").value, $("syn-variants").value))) {
      const li = document.createElement("li");
      li.textContent = `${row.text} `;
      const tag = document.createElement("span");
      tag.className = row.certainty;
      tag.textContent = `(${row.certainty})`;
      li.append(tag);
      out.append(li);
    }
  } catch (err) {
    showError(out, err);
  }
}

let curve = null;

function drawCurve() {
  const canvas = $("w-plot");
  const ctx = canvas.getContext("2d");
  const beta = Number($("w-beta").value);
  $("w-beta-val").textContent = beta.toFixed(2);
  ctx.clearRect(0, 0, canvas.width, canvas.height);
  try {
    curve = JSON.parse(weightCurve(Number($("w-n").value), beta));
  } catch (err) {
    curve = null;
    showError($("readout"), err);
    return;
  }
  // log scale on y: weights run from about 1 up to n^beta
  const pad = 30;
  const w = canvas.width - 2 * pad;
  const h = canvas.height - 2 * pad;
  const ymax = Math.max(...curve.not_mentioned, ...curve.mentioned, 2);
  const x = (i) => pad + (i / Math.max(curve.o.length - 1, 1)) * w;
  const y = (v) => pad + h - (Math.log(v) / Math.log(ymax)) * h;
  ctx.strokeStyle = "#ccc";
  ctx.strokeRect(pad, pad, w, h);
  ctx.fillStyle = "#555";
  ctx.fillText(`${ymax.toFixed(1)}`, 2, pad + 4);
  ctx.fillText("1", 2, pad + h);
  ctx.fillText("o = not-mentioned count", pad + w / 2 - 60, canvas.height - 8);
  for (const [key, colour] of [["not_mentioned", "#1f6feb"], ["mentioned", "#d1242f"]]) {
    ctx.strokeStyle = colour;
    ctx.beginPath();
    curve[key].forEach((v, i) => (i ? ctx.lineTo(x(i), y(v)) : ctx.moveTo(x(i), y(v))));
    ctx.stroke();
    ctx.fillStyle = colour;
    ctx.fillText(key.replace("_", " "), key === "mentioned" ? pad + w - 70 : pad + 6, pad + 14);
  }
}

function readCurve(event) {
  if (!curve) return;
  const canvas = $("w-plot");
  const frac = (event.offsetX - 30) / (canvas.width - 60);
  const i = Math.round(Math.min(Math.max(frac, 0), 1) * (curve.o.length - 1));
  $("readout").textContent =
    `o = ${curve.o[i]}: w(not mentioned) = ${curve.not_mentioned[i].toFixed(4)}, w(mentioned) = ${curve.mentioned[i].toFixed(4)}`;
}

let demo = null;

function trainDemo() {
  const status = $("status");
  $("d-go").disabled = true;
  $("d-train").disabled = true;
  try {
    demo = new Demo(Number($("d-seed").value), $("d-head").value, 500);
  } catch (err) {
    showError(status, err);
    $("d-train").disabled = false;
    return;
  }
  // one epoch per tick keeps the page responsive
  const tick = () => {
    try {
      const r = JSON.parse(demo.step());
      status.textContent =
        `epoch ${r.epoch}: loss ${r.train_loss.toFixed(4)}, validation micro F1 ${r.val_micro_f1.toFixed(3)}, macro F1 ${r.val_macro_f1.toFixed(3)}`;
      $("d-go").disabled = false;
      if (r.finished) {
        $("d-train").disabled = false;
        analyze();
      } else {
        setTimeout(tick, 0);
      }
    } catch (err) {
      showError(status, err);
      $("d-train").disabled = false;
    }
  };
  status.textContent = "training…";
  setTimeout(tick, 0);
}

function analyze() {
  const out = $("d-out");
  out.replaceChildren();
  if (!demo) return;
  let result;
  try {
    result = JSON.parse(demo.analyze($("d-text").value));
  } catch (err) {
    showError(out, err);
    return;
  }
  if (result.labels.length === 0) {
    out.textContent = "No label mentioned.";
    return;
  }
  for (const label of result.labels) {
    const row = document.createElement("div");
    row.className = "row";
    const name = document.createElement("strong");
    name.className = label.class;
    name.textContent = `${label.id} (${label.class}, p=${label.confidence.toFixed(2)}) `;
    row.append(name);
    const max = Math.max(...label.weights);
    result.tokens.forEach((token, i) => {
      const span = document.createElement("span");
      span.className = "tok";
      span.textContent = token;
      span.title = label.weights[i].toFixed(4);
      span.style.background = `rgba(255, 170, 0, ${(label.weights[i] / max).toFixed(3)})`;
      row.append(span);
    });
    out.append(row);
  }
  if (result.shared) {
    const note = document.createElement("div");
    note.id = "readout";
    note.textContent = "Single attention: every label reads the same weights.";
    out.append(note);
  }
}

async function main() {
  await init();
  $("loading").remove();
  $("syn-go").addEventListener("click", renderSynthetic);
  $("w-n").addEventListener("input", drawCurve);
  $("w-beta").addEventListener("input", drawCurve);
  $("w-plot").addEventListener("mousemove", readCurve);
  $("d-train").addEventListener("click", trainDemo);
  $("d-go").addEventListener("click", analyze);
  renderSynthetic();
  drawCurve();
}

main();
