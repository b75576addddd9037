import init, { separateRgba, compareRgba, focalCurve } from "./pkg/stainkit_wasm.js";

const $ = (id) => document.getElementById(id);
let source = null; // { width, height, rgba }

function drawRgba(canvas, width, height, rgba) {
  canvas.width = width;
  canvas.height = height;
  const data = new ImageData(new Uint8ClampedArray(rgba), width, height);
  canvas.getContext("2d").putImageData(data, 0, 0);
}

async function loadBitmap(blob) {
  const bitmap = await createImageBitmap(blob);
  const canvas = $("input");
  canvas.width = bitmap.width;
  canvas.height = bitmap.height;
  const ctx = canvas.getContext("2d");
  ctx.drawImage(bitmap, 0, 0);
  const { data } = ctx.getImageData(0, 0, bitmap.width, bitmap.height);
  source = { width: bitmap.width, height: bitmap.height, rgba: new Uint8Array(data.buffer) };
  separate();
}

function separate() {
  if (!source) return;
  const channel = $("channel").value;
  try {
    const t0 = performance.now();
    const out = separateRgba(source.rgba, source.width, source.height, channel);
    const ms = (performance.now() - t0).toFixed(1);
    drawRgba($("output"), source.width, source.height, out);
    $("output-caption").textContent = `${channel} only (${ms} ms)`;
    $("metrics").textContent = compareRgba(source.rgba, out, source.width, source.height);
    $("status").textContent = "";
  } catch (e) {
    $("status").textContent = e.message ?? String(e);
    $("status").className = "error";
  }
}

function plotCurve() {
  const gamma = Number($("gamma").value);
  const alpha = Number($("alpha").value);
  $("gamma-value").textContent = gamma;
  $("alpha-value").textContent = alpha;
  const n = 200;
  const focal = focalCurve(alpha, gamma, n);
  const ce = focalCurve(1, 0, n);

  const canvas = $("curve");
  const ctx = canvas.getContext("2d");
  const { width, height } = canvas;
  const pad = 24;
  const ymax = Math.max(...ce, ...focal);
  ctx.clearRect(0, 0, width, height);
  ctx.strokeStyle = "#999";
  ctx.strokeRect(pad, 4, width - pad - 4, height - pad - 4);
  ctx.fillStyle = "#666";
  ctx.fillText("p = 0.01", pad, height - 8);
  ctx.fillText("0.99", width - 30, height - 8);
  ctx.fillText(ymax.toFixed(1), 0, 12);

  const line = (values, color) => {
    ctx.beginPath();
    values.forEach((v, i) => {
      const x = pad + (i / (n - 1)) * (width - pad - 4);
      const y = 4 + (1 - v / ymax) * (height - pad - 8);
      i === 0 ? ctx.moveTo(x, y) : ctx.lineTo(x, y);
    });
    ctx.strokeStyle = color;
    ctx.lineWidth = 2;
    ctx.stroke();
  };
  line(ce, "#bbb");
  line(focal, "#8b4513");
}

await init();
$("file").addEventListener("change", (e) => e.target.files[0] && loadBitmap(e.target.files[0]));
$("channel").addEventListener("change", separate);
$("gamma").addEventListener("input", plotCurve);
$("alpha").addEventListener("input", plotCurve);
plotCurve();
loadBitmap(await (await fetch("sample.png")).blob());
