/**
 * Synchronous-style client for the membase HTTP service: every method is
 * one request, one typed response. Instances hold only immutable config,
 * so a client is safe to share only if nothing mutates between calls;
 * the intended pattern is one client per worker.
 *
 * Retries apply only to idempotent endpoints (search, entity get, health)
 * and back off exponentially from retry.baseDelayMs.
 */

import { ClientConfig, ResolvedConfig, resolveConfig } from "./config.js";
import { ApiError, ClientError, ConnectionError, TimeoutError } from "./errors.js";
import {
  AppendResponse, CompressResponse, EntityView, ExpireResponse,
  FlushResponse, HealthResponse, InstallSchemaResponse, MessageInput,
  SearchOptions, SearchResponse,
  COMPRESS_TARGET, EXPIRE_TARGET, HEALTH_TARGET, SCHEMAS_TARGET,
  appendMessageBody, entityTarget, nowBody, schemaBody,
  searchTarget, sessionFlushTarget, sessionMessagesTarget,
} from "./wire.js";

function sleep(ms: number): Promise<void> {
  return new Promise((resolve) => setTimeout(resolve, ms));
}

function isAbort(err: unknown): boolean {
  return err instanceof Error &&
    (err.name === "TimeoutError" || err.name === "AbortError");
}

interface RequestSpec {
  method: "GET" | "POST" | "PUT";
  target: string;
  body?: string;
  /** Only idempotent requests are retried. */
  idempotent: boolean;
}

export class MemoryBaseClient {
  private readonly config: ResolvedConfig;

  constructor(config: ClientConfig) {
    this.config = resolveConfig(config);
  }

  /** Validate and install a schema document (JSON text or plain object). */
  installSchema(document: string | object): Promise<InstallSchemaResponse> {
    return this.request({ method: "PUT", target: SCHEMAS_TARGET,
                          body: schemaBody(document), idempotent: false });
  }

  /** Append one message; the response says whether the buffer flushed. */
  appendMessage(sessionId: string, message: MessageInput): Promise<AppendResponse> {
    return this.request({ method: "POST",
                          target: sessionMessagesTarget(sessionId),
                          body: appendMessageBody(message),
                          idempotent: false });
  }

  /** Force extraction of the session's buffered messages. */
  flush(sessionId: string, options: { now?: number } = {}): Promise<FlushResponse> {
    return this.request({ method: "POST",
                          target: sessionFlushTarget(sessionId),
                          body: nowBody(options.now), idempotent: false });
  }

  search(q: string, options: SearchOptions = {}): Promise<SearchResponse> {
    return this.request({ method: "GET", target: searchTarget(q, options),
                          idempotent: true });
  }

  getEntity(entityType: string, groupKey: string): Promise<EntityView> {
    return this.request({ method: "GET",
                          target: entityTarget(entityType, groupKey),
                          idempotent: true });
  }

  /** Run one time-compression tick over aged event windows. */
  compress(options: { now?: number } = {}): Promise<CompressResponse> {
    return this.request({ method: "POST", target: COMPRESS_TARGET,
                          body: nowBody(options.now), idempotent: false });
  }

  /** Prune expired events whose covering summary is still stored. */
  expire(options: { now?: number } = {}): Promise<ExpireResponse> {
    return this.request({ method: "POST", target: EXPIRE_TARGET,
                          body: nowBody(options.now), idempotent: false });
  }

  health(): Promise<HealthResponse> {
    return this.request({ method: "GET", target: HEALTH_TARGET,
                          idempotent: true });
  }

  private async request<T>(spec: RequestSpec): Promise<T> {
    const attempts = spec.idempotent ? 1 + this.config.retry.maxRetries : 1;
    let lastError: unknown;
    for (let attempt = 0; attempt < attempts; attempt++) {
      if (attempt > 0) {
        await sleep(this.config.retry.baseDelayMs * 2 ** (attempt - 1));
      }
      try {
        return await this.requestOnce<T>(spec);
      } catch (err) {
        lastError = err;
        const transient = err instanceof ConnectionError ||
          err instanceof TimeoutError ||
          (err instanceof ApiError && err.status >= 500);
        if (!transient) throw err;
      }
    }
    throw lastError;
  }

  private async requestOnce<T>(spec: RequestSpec): Promise<T> {
    const url = this.config.baseUrl + spec.target;
    const headers: Record<string, string> = {};
    if (spec.body !== undefined) headers["content-type"] = "application/json";
    if (this.config.bearerToken !== null) {
      headers["authorization"] = `Bearer ${this.config.bearerToken}`;
    }
    let response: Response;
    let text: string;
    try {
      response = await fetch(url, {
        method: spec.method,
        headers,
        body: spec.body,
        signal: AbortSignal.timeout(this.config.timeoutMs),
      });
      text = await response.text();
    } catch (err) {
      if (isAbort(err)) {
        throw new TimeoutError(
          `${spec.method} ${url} exceeded ${this.config.timeoutMs}ms`,
          { cause: err });
      }
      throw new ConnectionError(`could not reach ${url}`, { cause: err });
    }
    if (!response.ok) throw new ApiError(response.status, text);
    try {
      return JSON.parse(text) as T;
    } catch (err) {
      throw new ClientError(
        `${spec.method} ${url} returned unparseable JSON`, { cause: err });
    }
  }
}
