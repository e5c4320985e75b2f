import { StudyApi } from "./api.js";
import { SessionController } from "./session.js";
import type { Choice, Demographics } from "./types.js";

const AGE_GROUPS = ["<=19", "20s", "30s", "40s", "50s", "60s", "70s", ">=80"];
const ETHNICITIES: Array<[number, string]> = [
  [1, "American Indian"],
  [2, "Asian and Pacific Islander"],
  [3, "black or African American"],
  [4, "Hispanic or Latino"],
  [5, "non-Hispanic white"],
  [6, "other"],
];

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  attrs: Record<string, string> = {},
  ...children: Array<Node | string>
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  for (const [k, v] of Object.entries(attrs)) {
    if (k === "class") node.className = v;
    else node.setAttribute(k, v);
  }
  node.append(...children);
  return node;
}

function select(name: string, options: Array<[string, string]>): HTMLSelectElement {
  const s = el("select", { name });
  s.append(el("option", { value: "" }, "choose..."));
  for (const [value, label] of options) {
    s.append(el("option", { value }, label));
  }
  return s;
}

/**
 * Mounts the study flow into a container and re-renders on every
 * controller transition. Choices are plain click targets (no keyboard
 * activation, so rapid-fire key presses cannot answer trials) and the
 * advance button stays disabled until a choice is made and every audio
 * clip has played through once.
 */
export class StudyView {
  private root: HTMLElement;
  private controller: SessionController;
  private experimentId: string;

  constructor(root: HTMLElement, controller: SessionController, experimentId: string) {
    this.root = root;
    this.controller = controller;
    this.experimentId = experimentId;
  }

  render(): void {
    const c = this.controller;
    this.root.replaceChildren();
    switch (c.state) {
      case "idle":
        this.renderQuestionnaire();
        break;
      case "creating":
      case "loading":
      case "submitting":
        this.root.append(el("p", { class: "status" }, "Loading..."));
        break;
      case "trial":
        this.renderTrial();
        break;
      case "done":
        this.renderDone();
        break;
      case "error":
        this.renderError();
        break;
    }
  }

  private renderQuestionnaire(): void {
    const gender = select("gender", [["m", "male"], ["f", "female"]]);
    const ethnicity = select("ethnicity",
      ETHNICITIES.map(([code, label]) => [String(code), label]));
    const fluency = select("fluency", [
      ["Y", "yes, English is my first language"],
      ["N", "no"],
    ]);
    const age = select("age_group", AGE_GROUPS.map((a) => [a, a]));
    const contributed = el("input", { type: "checkbox", name: "contributed" });
    const startBtn = el("button", { class: "primary" }, "Start the study") as HTMLButtonElement;
    const warning = el("p", { class: "warning" });

    startBtn.addEventListener("click", () => {
      if (!gender.value || !ethnicity.value || !fluency.value || !age.value) {
        warning.textContent = "Please answer every question before starting.";
        return;
      }
      const demographics: Demographics = {
        gender: gender.value as Demographics["gender"],
        ethnicity: Number(ethnicity.value),
        fluency: fluency.value as Demographics["fluency"],
        age_group: age.value,
        contributed_stimuli: (contributed as HTMLInputElement).checked,
      };
      void this.controller.begin(this.experimentId, demographics);
    });

    this.root.append(
      el("h1", {}, "Matching faces and voices"),
      el("p", {}, "First, a few questions about you."),
      el("label", {}, "Gender ", gender),
      el("label", {}, "Ethnicity ", ethnicity),
      el("label", {}, "Is English your first language? ", fluency),
      el("label", {}, "Age group ", age),
      el("label", {}, contributed, " I recorded clips for this dataset"),
      warning,
      startBtn,
    );
  }

  private stimulusNode(slot: string, kind: string, url: string): HTMLElement {
    if (kind === "image") {
      return el("img", { class: "stimulus", src: url, alt: `stimulus ${slot}` });
    }
    const audio = el("audio", { controls: "", preload: "auto", src: url });
    audio.addEventListener("ended", () => {
      this.controller.markPlayed(slot);
      this.render();
    });
    return el("div", { class: "stimulus audio" }, audio);
  }

  private renderTrial(): void {
    const c = this.controller;
    const trial = c.trial!;
    const progress = el(
      "p", { class: "progress" },
      `Question ${trial.index + 1} of ${trial.total}`,
    );
    const probeCaption = trial.direction === "V2F"
      ? "Listen to the voice:"
      : "Look at the face:";
    const question = trial.direction === "V2F"
      ? "Which face do you think belongs to this voice?"
      : "Which voice do you think belongs to this face?";

    const choicesRow = el("div", { class: "choices" });
    for (const key of ["A", "B"] as Choice[]) {
      const stim = trial.choices[key];
      const card = el(
        "div",
        { class: "choice" + (c.selected === key ? " selected" : ""), role: "button" },
        el("p", {}, `Candidate ${key}`),
        this.stimulusNode(key, stim.kind, stim.url),
      );
      card.addEventListener("click", () => {
        c.select(key);
        this.render();
      });
      choicesRow.append(card);
    }

    const nextBtn = el("button", { class: "primary" }, "Submit answer") as HTMLButtonElement;
    nextBtn.disabled = !c.canAdvance();
    nextBtn.addEventListener("click", () => void c.submit());

    const hint = el("p", { class: "hint" });
    if (!c.audioComplete()) {
      hint.textContent = "Play every recording to the end before answering.";
    } else if (c.selected === null) {
      hint.textContent = "Pick the candidate you think matches.";
    }

    this.root.append(
      progress,
      el("p", {}, probeCaption),
      this.stimulusNode("probe", trial.probe.kind, trial.probe.url),
      el("p", {}, question),
      choicesRow,
      hint,
      nextBtn,
    );
  }

  private renderDone(): void {
    this.root.append(
      el("h1", {}, "All done, thank you!"),
      el("p", {}, "Your completion code:"),
      el("p", { class: "code" }, this.controller.completionCode ?? ""),
    );
  }

  private renderError(): void {
    const retryBtn = el("button", { class: "primary" }, "Try again") as HTMLButtonElement;
    retryBtn.addEventListener("click", () => void this.controller.retry());
    this.root.append(
      el("h1", {}, "Connection problem"),
      el("p", {}, this.controller.lastError ?? "Something went wrong."),
      el("p", {}, "Your progress is saved; no answer was lost."),
      retryBtn,
    );
  }
}

export function mountStudy(root: HTMLElement, baseUrl: string, experimentId: string): SessionController {
  const controller = new SessionController(new StudyApi(baseUrl), () => view.render());
  const view = new StudyView(root, controller, experimentId);
  view.render();
  return controller;
}
