import init, { Demo, flow_density } from "./pkg/cflow_web.js";

const $ = (id) => document.getElementById(id);
let demo = null;
let current = 0;
let losses = [];

// viridis-like ramp for values in [0, 1]
const STOPS = [[68, 1, 84], [59, 82, 139], [33, 145, 140], [94, 201, 98], [253, 231, 37]];
function color(v) {
  const t = Math.min(1, Math.max(0, v)) * (STOPS.length - 1);
  const i = Math.min(STOPS.length - 2, Math.floor(t));
  const f = t - i;
  return STOPS[i].map((c, k) => Math.round(c + f * (STOPS[i + 1][k] - c)));
}

function paint(canvas, values, width, height, outline) {
  const off = new OffscreenCanvas(width, height);
  const octx = off.getContext("2d");
  const img = octx.createImageData(width, height);
  for (let p = 0; p < width * height; p++) {
    let [r, g, b] = color(values[p]);
    if (outline && outline[p]) {
      const edge = [p - 1, p + 1, p - width, p + width].some((q) => q < 0 || q >= outline.length || !outline[q]);
      if (edge) [r, g, b] = [255, 40, 40];
    }
    img.data.set([r, g, b, 255], 4 * p);
  }
  octx.putImageData(img, 0, 0);
  const ctx = canvas.getContext("2d");
  ctx.imageSmoothingEnabled = false;
  ctx.drawImage(off, 0, 0, canvas.width, canvas.height);
}

function status(text) {
  $("status").textContent = text;
}

function setBusy(busy) {
  for (const id of ["generate", "train-cflow", "train-uflow", "fit-mvg"]) {
    $(id).disabled = busy || (id !== "generate" && !demo);
  }
}

function drawLoss() {
  const c = $("loss");
  const ctx = c.getContext("2d");
  ctx.clearRect(0, 0, c.width, c.height);
  if (losses.length < 2) return;
  const lo = Math.min(...losses), hi = Math.max(...losses);
  ctx.strokeStyle = "#3b528b";
  ctx.beginPath();
  losses.forEach((l, i) => {
    const x = 10 + (i / (losses.length - 1)) * (c.width - 20);
    const y = c.height - 10 - ((l - lo) / (hi - lo || 1)) * (c.height - 20);
    i ? ctx.lineTo(x, y) : ctx.moveTo(x, y);
  });
  ctx.stroke();
}

function showMap() {
  const map = demo ? demo.anomaly_map(current) : [];
  const ready = map.length > 0;
  $("prev").disabled = $("next").disabled = !ready;
  if (!ready) {
    $("image-label").textContent = "no model yet";
    return;
  }
  const kind = demo.is_anomalous(current) ? "anomalous" : "good";
  $("image-label").textContent = `test image ${current + 1}/${demo.test_count()} (${kind})`;
  const mask = $("outline").checked ? demo.mask(current) : null;
  paint($("map"), map, demo.width(), demo.height(), mask);
}

function showMetrics() {
  const cells = $("metrics").rows[1].cells;
  const values = demo.metrics();
  values.forEach((v, i) => (cells[i].textContent = Number.isNaN(v) ? "n/a" : v.toFixed(4)));
}

function generate() {
  try {
    demo = new Demo(Number($("seed").value) >>> 0, Number($("shift").value));
    current = 0;
    losses = [];
    drawLoss();
    showMap();
    status(`generated ${demo.test_count()} test images (${demo.width()}×${demo.height()})`);
  } catch (e) {
    status(`error: ${e.message ?? e}`);
  }
  setBusy(false);
}

function trainFlow(conditional) {
  const epochs = Number($("epochs").value);
  try {
    demo.start_flow(epochs, conditional);
  } catch (e) {
    status(`error: ${e.message ?? e}`);
    return;
  }
  losses = [];
  setBusy(true);
  const name = conditional ? "conditional flow" : "unconditional flow";
  const step = () => {
    try {
      const loss = demo.train_epoch();
      if (loss === undefined) {
        status(`${name}: trained ${epochs} epochs, maps ready`);
        showMap();
        showMetrics();
        setBusy(false);
        return;
      }
      losses.push(loss);
      drawLoss();
      status(`${name}: epoch ${demo.epochs_done()}/${epochs}, loss ${loss.toFixed(4)}`);
      setTimeout(step, 0);
    } catch (e) {
      status(`error: ${e.message ?? e}`);
      setBusy(false);
    }
  };
  setTimeout(step, 0);
}

function fitMvg() {
  try {
    demo.fit_mvg();
    losses = [];
    drawLoss();
    status("Gaussian baseline fitted, maps ready");
    showMap();
    showMetrics();
  } catch (e) {
    status(`error: ${e.message ?? e}`);
  }
}

function drawDensity() {
  const steps = 128;
  try {
    const out = flow_density(
      Number($("d-seed").value) >>> 0,
      Number($("d-mag").value),
      Number($("d-layers").value),
      Number($("d-y").value),
      Number($("d-x").value),
      steps,
    );
    const mass = out[out.length - 1];
    const density = Array.from(out.slice(0, steps * steps), Math.exp);
    const peak = Math.max(...density);
    paint($("density"), density.map((v) => v / peak), steps, steps, null);
    $("mass").textContent = `integral over [-6, 6]² = ${mass.toFixed(5)}`;
  } catch (e) {
    $("mass").textContent = `error: ${e.message ?? e}`;
  }
}

await init();
$("shift").oninput = () => ($("shift-value").textContent = $("shift").value);
$("d-mag").oninput = () => {
  $("d-mag-value").textContent = $("d-mag").value;
  drawDensity();
};
for (const id of ["d-seed", "d-layers", "d-y", "d-x"]) $(id).onchange = drawDensity;
$("generate").onclick = generate;
$("train-cflow").onclick = () => trainFlow(true);
$("train-uflow").onclick = () => trainFlow(false);
$("fit-mvg").onclick = fitMvg;
$("prev").onclick = () => { current = (current + demo.test_count() - 1) % demo.test_count(); showMap(); };
$("next").onclick = () => { current = (current + 1) % demo.test_count(); showMap(); };
$("outline").onchange = showMap;
generate();
drawDensity();
