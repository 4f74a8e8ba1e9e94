/** DOM layer: builds the static markup once, then mirrors every session
 * state change into it. All interactive elements carry stable ids so the
 * behavior is scriptable (and tested) without a real backend. */

import { isDefaultOrbit, ORBIT_DEFAULTS, orbitCamera } from "./camera.js";
import { drawOverlay } from "./overlay.js";
import type { SessionController, SessionState } from "./session.js";
import { OVERLAY_MODES, type OverlayMode } from "./types.js";

const MARKUP = `
  <header>
    <h1>promptsplat viewer</h1>
    <span id="busy" class="hidden">querying…</span>
  </header>
  <div id="banner" class="hidden" role="alert">
    <span id="banner-message"></span>
    <button id="retry" type="button">retry</button>
  </div>
  <main>
    <aside id="controls">
      <label for="prompt-select">prompt</label>
      <select id="prompt-select"></select>
      <div class="row">
        <input id="prompt-custom" type="text" placeholder="try any prompt…" />
        <button id="prompt-go" type="button">query</button>
      </div>
      <ul id="suggestions"></ul>

      <label for="time-slider">time <span id="time-value"></span></label>
      <input id="time-slider" type="range" min="0" max="1" step="any" />

      <label for="threshold-slider">threshold <span id="threshold-value"></span></label>
      <input id="threshold-slider" type="range" min="0" max="1" step="0.001" />

      <label for="overlay-select">overlay</label>
      <select id="overlay-select"></select>

      <label for="opacity-slider">heatmap opacity <span id="opacity-value"></span></label>
      <input id="opacity-slider" type="range" min="0" max="1" step="0.05" />

      <fieldset>
        <legend>camera orbit</legend>
        <label for="cam-az">azimuth <span id="cam-az-value"></span>°</label>
        <input id="cam-az" type="range" min="-75" max="75" step="1" value="0" />
        <label for="cam-el">elevation <span id="cam-el-value"></span>°</label>
        <input id="cam-el" type="range" min="-60" max="60" step="1" value="0" />
        <label for="cam-radius">radius <span id="cam-radius-value"></span></label>
        <input id="cam-radius" type="range" min="1" max="6" step="0.1" value="3" />
        <label for="cam-fov">fov <span id="cam-fov-value"></span>°</label>
        <input id="cam-fov" type="range" min="25" max="100" step="1" value="60" />
        <button id="cam-reset" type="button">reset camera</button>
      </fieldset>
    </aside>
    <section id="viewport">
      <canvas id="view" width="2" height="2"></canvas>
      <dl id="stats">
        <dt>shape</dt><dd id="stat-shape">–</dd>
        <dt>score min</dt><dd id="stat-min">–</dd>
        <dt>score max</dt><dd id="stat-max">–</dd>
        <dt>score mean</dt><dd id="stat-mean">–</dd>
        <dt>mask coverage</dt><dd id="stat-coverage">–</dd>
        <dt>server coverage</dt><dd id="stat-server-coverage">–</dd>
        <dt>query latency</dt><dd id="stat-latency">–</dd>
      </dl>
    </section>
  </main>
`;

function get<T extends HTMLElement>(root: HTMLElement, id: string): T {
  const el = root.querySelector<T>(`#${id}`);
  if (!el) throw new Error(`missing #${id}`);
  return el;
}

export function buildUi(root: HTMLElement, session: SessionController): void {
  root.innerHTML = MARKUP;

  const banner = get<HTMLDivElement>(root, "banner");
  const bannerMessage = get<HTMLSpanElement>(root, "banner-message");
  const retry = get<HTMLButtonElement>(root, "retry");
  const busy = get<HTMLSpanElement>(root, "busy");
  const promptSelect = get<HTMLSelectElement>(root, "prompt-select");
  const promptCustom = get<HTMLInputElement>(root, "prompt-custom");
  const promptGo = get<HTMLButtonElement>(root, "prompt-go");
  const suggestions = get<HTMLUListElement>(root, "suggestions");
  const timeSlider = get<HTMLInputElement>(root, "time-slider");
  const timeValue = get<HTMLSpanElement>(root, "time-value");
  const thresholdSlider = get<HTMLInputElement>(root, "threshold-slider");
  const thresholdValue = get<HTMLSpanElement>(root, "threshold-value");
  const overlaySelect = get<HTMLSelectElement>(root, "overlay-select");
  const opacitySlider = get<HTMLInputElement>(root, "opacity-slider");
  const opacityValue = get<HTMLSpanElement>(root, "opacity-value");
  const camAz = get<HTMLInputElement>(root, "cam-az");
  const camEl = get<HTMLInputElement>(root, "cam-el");
  const camRadius = get<HTMLInputElement>(root, "cam-radius");
  const camFov = get<HTMLInputElement>(root, "cam-fov");
  const camReset = get<HTMLButtonElement>(root, "cam-reset");
  const canvas = get<HTMLCanvasElement>(root, "view");

  for (const mode of OVERLAY_MODES) {
    const opt = document.createElement("option");
    opt.value = mode;
    opt.textContent = mode;
    overlaySelect.appendChild(opt);
  }

  // --- control events -> session -------------------------------------
  promptSelect.addEventListener("change", () => {
    if (promptSelect.value) session.setPrompt(promptSelect.value);
  });
  const submitCustomPrompt = () => {
    const text = promptCustom.value.trim();
    if (text) session.setPrompt(text);
  };
  promptGo.addEventListener("click", submitCustomPrompt);
  promptCustom.addEventListener("keydown", (ev) => {
    if (ev.key === "Enter") submitCustomPrompt();
  });
  suggestions.addEventListener("click", (ev) => {
    const li = (ev.target as HTMLElement).closest("li");
    if (li?.dataset.prompt) {
      promptCustom.value = li.dataset.prompt;
      session.setPrompt(li.dataset.prompt);
    }
  });
  timeSlider.addEventListener("input", () => {
    session.setTime(parseFloat(timeSlider.value));
  });
  thresholdSlider.addEventListener("input", () => {
    session.setThreshold(parseFloat(thresholdSlider.value));
  });
  overlaySelect.addEventListener("change", () => {
    session.setOverlay(overlaySelect.value as OverlayMode);
  });
  opacitySlider.addEventListener("input", () => {
    session.setOpacity(parseFloat(opacitySlider.value));
  });
  const pushCamera = () => {
    const az = parseFloat(camAz.value);
    const el = parseFloat(camEl.value);
    const radius = parseFloat(camRadius.value);
    const fov = parseFloat(camFov.value);
    session.setCamera(
      isDefaultOrbit(az, el, radius, fov) ? null : orbitCamera(az, el, radius, fov),
    );
  };
  for (const slider of [camAz, camEl, camRadius, camFov]) {
    slider.addEventListener("input", pushCamera);
  }
  camReset.addEventListener("click", () => {
    camAz.value = String(ORBIT_DEFAULTS.azimuth);
    camEl.value = String(ORBIT_DEFAULTS.elevation);
    camRadius.value = String(ORBIT_DEFAULTS.radius);
    camFov.value = String(ORBIT_DEFAULTS.fov);
    session.setCamera(null);
  });
  retry.addEventListener("click", () => {
    if (session.getState().phase === "error") void session.connect();
    else void session.refresh();
  });

  // --- session state -> DOM -------------------------------------------
  const render = (state: SessionState): void => {
    const { meta, result } = state;

    banner.classList.toggle("hidden", state.error === null);
    bannerMessage.textContent = state.error ?? "";
    busy.classList.toggle("hidden", !state.busy);

    if (meta) {
      const want = meta.prompts;
      const have = Array.from(promptSelect.options).map((o) => o.value);
      if (want.join("\u0000") !== have.join("\u0000")) {
        promptSelect.innerHTML = "";
        for (const p of want) {
          const opt = document.createElement("option");
          opt.value = p;
          opt.textContent = p;
          promptSelect.appendChild(opt);
        }
      }
      promptSelect.value = state.prompt && want.includes(state.prompt) ? state.prompt : "";
      const [t0, t1] = meta.time_range;
      timeSlider.min = String(t0);
      timeSlider.max = String(t1);
      timeSlider.step = String((t1 - t0) / Math.max(1, 4 * (meta.n_frames - 1)));
    }

    if (document.activeElement !== timeSlider) timeSlider.value = String(state.time);
    timeValue.textContent = state.time.toFixed(3);
    if (document.activeElement !== thresholdSlider) {
      thresholdSlider.value = String(state.threshold);
    }
    thresholdValue.textContent = state.threshold.toFixed(3);
    overlaySelect.value = state.overlay;
    opacitySlider.value = String(state.opacity);
    opacityValue.textContent = state.opacity.toFixed(2);
    get<HTMLSpanElement>(root, "cam-az-value").textContent = camAz.value;
    get<HTMLSpanElement>(root, "cam-el-value").textContent = camEl.value;
    get<HTMLSpanElement>(root, "cam-radius-value").textContent = camRadius.value;
    get<HTMLSpanElement>(root, "cam-fov-value").textContent = camFov.value;

    suggestions.innerHTML = "";
    for (const s of state.suggestions) {
      const li = document.createElement("li");
      li.className = "suggestion";
      li.dataset.prompt = s;
      li.textContent = s;
      suggestions.appendChild(li);
    }

    const fmt = (v: number | undefined) => (v === undefined ? "–" : v.toFixed(4));
    get<HTMLElement>(root, "stat-shape").textContent = result
      ? `${result.shape[1]} × ${result.shape[0]}`
      : "–";
    get<HTMLElement>(root, "stat-min").textContent = fmt(result?.stats.min);
    get<HTMLElement>(root, "stat-max").textContent = fmt(result?.stats.max);
    get<HTMLElement>(root, "stat-mean").textContent = fmt(result?.stats.mean);
    get<HTMLElement>(root, "stat-coverage").textContent = result
      ? `${(state.maskCoverage * 100).toFixed(2)} %`
      : "–";
    get<HTMLElement>(root, "stat-server-coverage").textContent = result
      ? `${(result.stats.coverage * 100).toFixed(2)} %`
      : "–";
    get<HTMLElement>(root, "stat-latency").textContent = result
      ? `${result.latencyMs.toFixed(0)} ms`
      : "–";

    canvas.dataset.overlay = state.overlay;
    void drawOverlay(canvas, state);
  };

  session.subscribe(render);
  render(session.getState());
}
