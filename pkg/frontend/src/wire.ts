/**
 * Wire types and request builders.
 *
 * Response interfaces mirror the service's JSON bodies field-for-field.
 * Request bodies and URL targets are produced here and nowhere else, so
 * the bytes on the wire are deterministic and covered by golden fixtures.
 */

import type { ViolationView } from "./errors.js";

// ---------------------------------------------------------------- responses

export interface InstallSchemaResponse {
  version: number;
  tenant: string;
  report: ViolationView[];
}

export type AppendResponse =
  | { status: "buffered"; buffered: number }
  | { status: "flushed"; events: number; flush_id: string };

export interface FlushResponse {
  status: string;
  flush_id: string;
  event_ids: string[];
  patched_entities: string[];
  created_entities: string[];
  updated_entities: string[];
  queued: number;
  warnings: string[];
}

export interface ScoredMemoryView {
  id: string;
  kind: string;
  text: string;
  metadata: Record<string, unknown>;
  s_origin: number;
  s_time: number;
  s_busi: number;
  s_final: number;
  path: string;
}

export interface SearchResponse {
  results: ScoredMemoryView[];
}

export interface EntityView {
  id: string;
  entity_type: string;
  group_key: string;
  properties: Record<string, unknown>;
  version: number;
  updated_at: number;
}

export interface CompressResponse {
  timelines: number;
  summaries: number;
  ttls: number;
}

export interface ExpireResponse {
  pruned: string[];
}

export interface HealthResponse {
  status: string;
  version: string;
  records: number;
  queue_depth: number;
  schema_tenant: string | null;
  schema_version: number | null;
}

// ----------------------------------------------------------------- requests

export interface MessageInput {
  user: string;
  role: string;
  content: string;
  timestamp?: number;
}

export interface SearchOptions {
  k?: number;
  w_time?: number;
  w_busi?: number;
  rerank?: boolean;
  now?: number;
}

/** Schema documents pass through verbatim; objects serialize compactly. */
export function schemaBody(document: string | object): string {
  return typeof document === "string" ? document : JSON.stringify(document);
}

export function appendMessageBody(message: MessageInput): string {
  const body: Record<string, unknown> = {
    user: message.user,
    role: message.role,
    content: message.content,
  };
  if (message.timestamp !== undefined) body.timestamp = message.timestamp;
  return JSON.stringify(body);
}

/** Body for flush/compress/expire: "{}" or {"now": <ms>}. */
export function nowBody(now?: number): string {
  return now === undefined ? "{}" : JSON.stringify({ now });
}

export function sessionMessagesTarget(sessionId: string): string {
  return `/v1/sessions/${encodeURIComponent(sessionId)}/messages`;
}

export function sessionFlushTarget(sessionId: string): string {
  return `/v1/sessions/${encodeURIComponent(sessionId)}/flush`;
}

/** Query parameters appear in a fixed order: q, k, w_time, w_busi, rerank, now. */
export function searchTarget(q: string, options: SearchOptions = {}): string {
  const params = new URLSearchParams();
  params.set("q", q);
  if (options.k !== undefined) params.set("k", String(options.k));
  if (options.w_time !== undefined) params.set("w_time", String(options.w_time));
  if (options.w_busi !== undefined) params.set("w_busi", String(options.w_busi));
  if (options.rerank !== undefined) params.set("rerank", String(options.rerank));
  if (options.now !== undefined) params.set("now", String(options.now));
  return `/v1/memories/search?${params.toString()}`;
}

/**
 * Group keys may contain "/" inside values; each slash-separated piece is
 * percent-encoded on its own so the slashes survive routing.
 */
export function entityTarget(entityType: string, groupKey: string): string {
  const key = groupKey.split("/").map(encodeURIComponent).join("/");
  return `/v1/entities/${encodeURIComponent(entityType)}/${key}`;
}

export const SCHEMAS_TARGET = "/v1/schemas";
export const COMPRESS_TARGET = "/v1/admin/compress";
export const EXPIRE_TARGET = "/v1/admin/expire";
export const HEALTH_TARGET = "/v1/healthz";
