// @vitest-environment happy-dom
//
// Console round-trip against the real review API: the store is seeded with
// the bundled replay corpus (minus ground-truth grades, so the console's
// override is the first human grade on record), `inkgrade serve` runs as a
// child process, and the app is driven through its DOM.

import { ChildProcess, execFileSync, spawn } from "node:child_process";
import { mkdtempSync, readFileSync, rmSync, writeFileSync } from "node:fs";
import { tmpdir } from "node:os";
import * as path from "node:path";
import { afterAll, beforeAll, describe, expect, it } from "vitest";

import { ReviewApiClient } from "../src/api.js";
import { ConsoleApp } from "../src/app.js";

const REPO_ROOT = path.resolve(__dirname, "..", "..");
const DEMO_DIR = path.join(REPO_ROOT, "fixtures", "demo");
const TOKEN = "console-test-token";
const PORT = 20000 + (process.pid % 9000);
const BASE_URL = `http://127.0.0.1:${PORT}`;

let workDir: string;
let server: ChildProcess;
let client: ReviewApiClient;

function cli(...args: string[]): void {
  execFileSync("python3", ["-m", "inkgrade.cli", ...args], {
    cwd: REPO_ROOT,
    stdio: ["ignore", "pipe", "pipe"],
  });
}

async function waitForServer(): Promise<void> {
  for (let attempt = 0; attempt < 120; attempt++) {
    try {
      const resp = await fetch(`${BASE_URL}/healthz`);
      if (resp.ok) return;
    } catch {
      // not up yet
    }
    await new Promise((resolve) => setTimeout(resolve, 250));
  }
  throw new Error(`review API did not come up on ${BASE_URL}`);
}

beforeAll(async () => {
  workDir = mkdtempSync(path.join(tmpdir(), "inkgrade-console-"));
  const storeDir = path.join(workDir, "store");

  // Re-point image paths at the corpus and drop the bundled ground-truth
  // grades: this test's override must be the first human grade.
  const manifest = JSON.parse(
    readFileSync(path.join(DEMO_DIR, "manifest.json"), "utf-8"),
  );
  manifest.human_evaluations = [];
  for (const sub of manifest.submissions) {
    for (const img of sub.images) {
      img.path = path.join(DEMO_DIR, img.path);
    }
  }
  const manifestPath = path.join(workDir, "manifest.json");
  writeFileSync(manifestPath, JSON.stringify(manifest));

  cli("ingest", "--store", storeDir, manifestPath);
  cli("enqueue", "--store", storeDir, "--rubric", "rub-res",
      "--model-config", "replay-vision-1");
  cli("enqueue", "--store", storeDir, "--rubric", "rub-proj",
      "--model-config", "replay-vision-1");
  cli("run-jobs", "--store", storeDir, "--provider", "replay",
      "--fixtures", path.join(DEMO_DIR, "replay"));

  server = spawn(
    "python3",
    ["-m", "inkgrade.cli", "serve", "--store", storeDir,
     "--port", String(PORT), "--token", TOKEN],
    { cwd: REPO_ROOT, stdio: ["ignore", "pipe", "pipe"] },
  );
  await waitForServer();
  // happy-dom drops the Authorization header on cross-origin fetches even
  // after a successful preflight; run the console same-origin instead.
  (window as unknown as { happyDOM: { setURL(url: string): void } }).happyDOM.setURL(
    `${BASE_URL}/`,
  );
  client = new ReviewApiClient({ baseUrl: BASE_URL, token: TOKEN });
});

afterAll(async () => {
  server?.kill();
  await new Promise((resolve) => setTimeout(resolve, 200));
  rmSync(workDir, { recursive: true, force: true });
});

function mountApp(): ConsoleApp {
  document.body.innerHTML = '<div id="app"></div>';
  const root = document.getElementById("app")!;
  // happy-dom has no object URLs for fetched blobs; the blob endpoint itself
  // is asserted separately below.
  return new ConsoleApp(client, root, { graderId: "grader-t", loadImages: false });
}

function text(testid: string): string {
  const node = document.querySelector(`[data-testid="${testid}"]`);
  expect(node, `missing [data-testid=${testid}]`).toBeTruthy();
  return node!.textContent ?? "";
}

describe("console round trip", () => {
  it("flips one rubric item, submits the override, and the store agrees", async () => {
    const app = mountApp();
    await app.showQueue();
    expect(document.querySelectorAll(".queue-row").length).toBe(4);
    expect(text("override-sub-002")).toBe("no");

    await app.openCase("sub-002", "replay-vision-1");
    expect(text("effective")).toContain("effective: AI");
    expect(text("transcription")).toContain("r = b - A x1");

    // Cursor starts on i1 (AI selected it); space flips the draft, s submits.
    await app.handleKey(new KeyboardEvent("keydown", { key: " " }));
    expect(
      (document.querySelector('[data-testid="draft-i1"]') as HTMLInputElement).checked,
    ).toBe(false);
    await app.handleKey(new KeyboardEvent("keydown", { key: "s" }));

    // The screen re-fetched after the write: human grade now rules.
    expect(text("effective")).toContain("effective: HUMAN");
    expect(text("effective")).toContain("(2/3)");
    expect(text("banner")).toContain("override recorded");
    // The flipped cell shows the server-derived disagreement (AI selected,
    // human did not -> FP).
    expect(text("state-i1")).toContain("FP");

    // Reload from scratch: nothing was client-side-only.
    const fresh = mountApp();
    await fresh.showQueue();
    expect(text("override-sub-002")).toBe("yes");
    const queue = await client.getQueue();
    const entry = queue.entries.find((e) => e.submission_id === "sub-002")!;
    expect(entry.has_override).toBe(true);
    const reloaded = await client.getCase("sub-002");
    expect(reloaded.effective.source).toBe("HUMAN");
    expect(reloaded.human_selections?.find((s) => s.item_id === "i1")?.selected).toBe(false);
  });

  it("tags the FP as a transcription error and the report counts it", async () => {
    const app = mountApp();
    await app.openCase("sub-002", "replay-vision-1");
    // Cursor on i1, which carries the FP disagreement from the previous test.
    await app.handleKey(new KeyboardEvent("keydown", { key: "t" }));
    expect(document.querySelector('[data-testid="tag-drawer"]')).toBeTruthy();

    const note = document.querySelector('[data-testid="tag-note"]') as HTMLTextAreaElement;
    note.value = "blurry, digits illegible";
    note.dispatchEvent(new Event("input"));
    (document.querySelector('[data-testid="tag-save"]') as HTMLButtonElement).click();
    await new Promise((resolve) => setTimeout(resolve, 300));

    expect(text("state-i1")).toContain("TE");
    const reloaded = await client.getCase("sub-002");
    expect(reloaded.disagreements).toEqual([
      expect.objectContaining({
        item_id: "i1",
        outcome: "FP",
        category: "TE",
        note: "blurry, digits illegible",
      }),
    ]);

    const reports = await client.getReports();
    const row = reports.rows.find((r) => r.question_id === "errors-vs-residuals")!;
    expect(row.te).toBe(1);
    expect(row.rae).toBe(0);
    expect(row.uncategorized).toBe(0);
    expect(row.fp).toBe(1);
  });

  it("keeps keyboard-only operation working through document events", async () => {
    const app = mountApp();
    await app.openCase("sub-001", "replay-vision-1");
    document.dispatchEvent(new KeyboardEvent("keydown", { key: "j" }));
    await new Promise((resolve) => setTimeout(resolve, 100));
    expect(app.vm?.cursor).toBe(1);
    document.dispatchEvent(new KeyboardEvent("keydown", { key: "r" }));
    await new Promise((resolve) => setTimeout(resolve, 100));
    expect(app.vm?.rotation).toBe(90);
    const img = document.querySelector('[data-testid="submission-image"]') as HTMLImageElement;
    expect(img.style.transform).toContain("rotate(90deg)");
  });

  it("serves the submission image bytes behind auth", async () => {
    const casePayload = await client.getCase("sub-001");
    const resp = await fetch(`${BASE_URL}${casePayload.image.url}`, {
      headers: { Authorization: `Bearer ${TOKEN}` },
    });
    expect(resp.status).toBe(200);
    const bytes = new Uint8Array(await resp.arrayBuffer());
    expect(bytes.length).toBeGreaterThan(100);
    // PNG magic
    expect(Array.from(bytes.slice(0, 4))).toEqual([0x89, 0x50, 0x4e, 0x47]);
    // Distinct URL via query string: happy-dom would otherwise answer from
    // its HTTP cache (the blob response is deliberately marked immutable).
    const unauthorized = await fetch(
      `${BASE_URL}${casePayload.image.url}?cachebust=1`,
    );
    expect(unauthorized.status).toBe(401);
  });
});
