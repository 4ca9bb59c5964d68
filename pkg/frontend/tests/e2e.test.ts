/**
 * End-to-end: boot the real service with a scripted model provider, then
 * drive it over the wire: install schema -> 20 messages (the 20th flushes
 * at the default threshold) -> flush -> search. Also checks entity reads,
 * admin calls, health, auth, and that response bodies carry exactly the
 * documented fields.
 */

import { ChildProcess, spawn } from "node:child_process";
import { mkdtempSync, rmSync, writeFileSync } from "node:fs";
import http from "node:http";
import type { AddressInfo } from "node:net";
import { tmpdir } from "node:os";
import { join } from "node:path";
import { afterAll, beforeAll, describe, expect, it } from "vitest";
import { ApiError, MemoryBaseClient } from "../src/index.js";

const TOKEN = "sdk-e2e-token";
const T0 = 1_700_000_000_000;

const SCHEMA_DOC = {
  tenant: "sdk",
  version: 1,
  events: [
    {
      EventType: "Note",
      Description: "one remembered fact",
      Properties: [
        { PropertyName: "situation", PropertyType: "string",
          Description: "what happened" },
        { PropertyName: "tool", PropertyType: "string",
          Description: "tool involved" },
      ],
    },
  ],
  entities: [
    {
      EntityType: "ToolProfile",
      Description: "per-tool tally",
      Properties: [
        {
          PropertyName: "calls",
          PropertyType: "integer",
          Description: "total notes",
          AggregateExpression: {
            EventType: "Note", PropertyName: "situation",
            Op: "COUNT", GroupBy: ["tool"],
          },
        },
      ],
    },
  ],
};

const PLAN_REPLY = JSON.stringify(
  { topics: [{ label: "identity", spans: [[0, 19]] }] });
const EXTRACTION_REPLY = JSON.stringify({
  events: [{
    type: "Note",
    properties: {
      situation: "the user goes by the nickname Ace",
      tool: "web_search",
    },
    topic: "identity",
  }],
  entity_updates: [],
});

const SCRIPT = [
  { match: "inclusive 0-based message indices", reply: PLAN_REPLY },
  { match: "## Topic: identity", reply: EXTRACTION_REPLY },
  { match: "", reply: "{}" },
];

async function freePort(): Promise<number> {
  const probe = http.createServer();
  await new Promise<void>((resolve) => probe.listen(0, "127.0.0.1", resolve));
  const port = (probe.address() as AddressInfo).port;
  await new Promise<void>((resolve) => probe.close(() => resolve()));
  return port;
}

function sleep(ms: number): Promise<void> {
  return new Promise((resolve) => setTimeout(resolve, ms));
}

describe("live service e2e", () => {
  let workdir: string;
  let child: ChildProcess;
  let stderr = "";
  let client: MemoryBaseClient;
  let anonymous: MemoryBaseClient;

  beforeAll(async () => {
    workdir = mkdtempSync(join(tmpdir(), "membase-sdk-"));
    const scriptPath = join(workdir, "script.json");
    const configPath = join(workdir, "config.json");
    writeFileSync(scriptPath, JSON.stringify(SCRIPT));
    const port = await freePort();
    writeFileSync(configPath, JSON.stringify({
      host: "127.0.0.1",
      port,
      bearer_token: TOKEN,
      provider: "mock",
      mock_script: scriptPath,
    }));

    child = spawn("python3", ["-m", "membase.cli", "serve",
                              "--config", configPath],
                  { stdio: ["ignore", "ignore", "pipe"] });
    child.stderr?.on("data", (chunk: Buffer) => { stderr += chunk.toString(); });

    const base = `http://127.0.0.1:${port}`;
    client = new MemoryBaseClient({ baseUrl: base, bearerToken: TOKEN });
    anonymous = new MemoryBaseClient({
      baseUrl: base, timeoutMs: 1_000,
      retry: { maxRetries: 0, baseDelayMs: 1 },
    });

    let ready = false;
    for (let i = 0; i < 150 && !ready; i++) {
      if (child.exitCode !== null) break;
      ready = await anonymous.health().then(
        (h) => h.status === "ok", () => false);
      if (!ready) await sleep(200);
    }
    if (!ready) {
      throw new Error(`service did not come up; stderr:\n${stderr}`);
    }
  });

  afterAll(async () => {
    if (child && child.exitCode === null) {
      child.kill("SIGTERM");
      await Promise.race([
        new Promise<void>((resolve) => child.once("exit", () => resolve())),
        sleep(5_000).then(() => { child.kill("SIGKILL"); }),
      ]);
    }
    rmSync(workdir, { recursive: true, force: true });
  });

  it("installs the schema", async () => {
    const report = await client.installSchema(SCHEMA_DOC);
    expect(report.tenant).toBe("sdk");
    expect(report.version).toBe(1);
    expect(report.report.filter((v) => v.severity === "error")).toHaveLength(0);
  });

  it("buffers 19 messages, flushes on the 20th", async () => {
    for (let i = 0; i < 19; i++) {
      const res = await client.appendMessage("s1", {
        user: "u1",
        role: i % 2 === 0 ? "user" : "assistant",
        content: `turn ${i}: chatting about the nickname Ace`,
        timestamp: T0 + i * 1_000,
      });
      expect(res.status).toBe("buffered");
      if (res.status === "buffered") expect(res.buffered).toBe(i + 1);
    }
    const last = await client.appendMessage("s1", {
      user: "u1",
      role: "assistant",
      content: "turn 19: noted, Ace it is",
      timestamp: T0 + 19_000,
    });
    expect(last.status).toBe("flushed");
    if (last.status === "flushed") {
      expect(last.events).toBe(1);
      expect(last.flush_id).toMatch(/^[0-9a-f]{32}$/);
    }
  });

  it("explicit flush of the drained buffer reports empty, field-for-field", async () => {
    const summary = await client.flush("s1", { now: T0 + 20_000 });
    expect(summary.status).toBe("empty");
    expect(Object.keys(summary).sort()).toEqual([
      "created_entities", "event_ids", "flush_id", "patched_entities",
      "queued", "status", "updated_entities", "warnings",
    ]);
  });

  it("search returns scored results with every documented field", async () => {
    const { results } = await client.search(
      "what nickname does the user go by", { k: 5, now: T0 + 30_000 });
    expect(results.length).toBeGreaterThan(0);
    for (const hit of results) {
      expect(Object.keys(hit).sort()).toEqual([
        "id", "kind", "metadata", "path", "s_busi", "s_final",
        "s_origin", "s_time", "text",
      ]);
      expect(typeof hit.s_final).toBe("number");
      expect(hit.s_final).toBeGreaterThanOrEqual(0);
      expect(hit.s_final).toBeLessThanOrEqual(1);
    }
    expect(results.some((hit) => hit.text.includes("nickname"))).toBe(true);
  });

  it("reads the materialized entity", async () => {
    const entity = await client.getEntity("ToolProfile", "tool=web_search");
    expect(Object.keys(entity).sort()).toEqual([
      "entity_type", "group_key", "id", "properties", "updated_at", "version",
    ]);
    expect(entity.entity_type).toBe("ToolProfile");
    expect(entity.group_key).toBe("tool=web_search");
    expect(entity.properties.calls).toBe(1);
  });

  it("passes a live 404 problem detail through", async () => {
    const err = await client.getEntity("ToolProfile", "tool=missing")
      .catch((e) => e);
    expect(err).toBeInstanceOf(ApiError);
    expect(err.status).toBe(404);
    expect(err.code).toBe("not_found");
  });

  it("runs the admin endpoints", async () => {
    const compress = await client.compress({ now: T0 + 40_000 });
    expect(Object.keys(compress).sort()).toEqual(
      ["summaries", "timelines", "ttls"]);
    const expire = await client.expire({ now: T0 + 40_000 });
    expect(expire).toEqual({ pruned: [] });
  });

  it("reports health, field-for-field", async () => {
    const health = await client.health();
    expect(Object.keys(health).sort()).toEqual([
      "queue_depth", "records", "schema_tenant", "schema_version",
      "status", "version",
    ]);
    expect(health.status).toBe("ok");
    expect(health.schema_tenant).toBe("sdk");
    expect(health.records).toBeGreaterThanOrEqual(1);
  });

  it("rejects unauthenticated mutations but keeps health open", async () => {
    const err = await anonymous.appendMessage("s1",
      { user: "u1", role: "user", content: "hi" }).catch((e) => e);
    expect(err).toBeInstanceOf(ApiError);
    expect(err.status).toBe(401);
    expect(err.code).toBe("unauthorized");
    const health = await anonymous.health();
    expect(health.status).toBe("ok");
  });
});
