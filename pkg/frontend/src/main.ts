import { ReviewApiClient } from "./api.js";
import { ConsoleApp } from "./app.js";

function readConfig(): { baseUrl: string; token: string; graderId: string } {
  const params = new URLSearchParams(window.location.search);
  const baseUrl =
    params.get("api") ??
    localStorage.getItem("inkgrade.api") ??
    "http://127.0.0.1:8787";
  const token = params.get("token") ?? localStorage.getItem("inkgrade.token") ?? "";
  const graderId =
    params.get("grader") ?? localStorage.getItem("inkgrade.grader") ?? "grader";
  localStorage.setItem("inkgrade.api", baseUrl);
  if (token) localStorage.setItem("inkgrade.token", token);
  localStorage.setItem("inkgrade.grader", graderId);
  return { baseUrl, token, graderId };
}

const config = readConfig();
const root = document.getElementById("app");
if (!root) {
  throw new Error("missing #app mount point");
}
if (!config.token) {
  root.textContent =
    "No API token. Open with ?api=<base-url>&token=<bearer-token>&grader=<id>.";
} else {
  const client = new ReviewApiClient({ baseUrl: config.baseUrl, token: config.token });
  const app = new ConsoleApp(client, root, { graderId: config.graderId });
  void app.showQueue();
}
