import { mountStudy } from "./ui.js";

const params = new URLSearchParams(window.location.search);
const experimentId = params.get("experiment") ?? "exp1_G";
const root = document.getElementById("app");
if (!root) throw new Error("missing #app container");
mountStudy(root, "", experimentId);
