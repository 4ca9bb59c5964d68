/** Client configuration and its invariants. */

export interface RetryPolicy {
  /** Extra attempts after the first try; 0..3. */
  maxRetries: number;
  /** Delay before the first retry; doubles on each further retry. */
  baseDelayMs: number;
}

export interface ClientConfig {
  /** Service root, e.g. "http://127.0.0.1:8787". */
  baseUrl: string;
  /** Sent as "Authorization: Bearer <token>" when set. */
  bearerToken?: string;
  /** Per-request deadline in milliseconds; must be > 0. */
  timeoutMs?: number;
  retry?: Partial<RetryPolicy>;
}

export interface ResolvedConfig {
  baseUrl: string;
  bearerToken: string | null;
  timeoutMs: number;
  retry: RetryPolicy;
}

export const DEFAULT_TIMEOUT_MS = 10_000;
export const MAX_RETRIES_CAP = 3;
export const DEFAULT_RETRY: RetryPolicy = { maxRetries: 3, baseDelayMs: 200 };

export function resolveConfig(config: ClientConfig): ResolvedConfig {
  const timeoutMs = config.timeoutMs ?? DEFAULT_TIMEOUT_MS;
  if (!(timeoutMs > 0)) {
    throw new RangeError(`timeoutMs must be > 0, got ${timeoutMs}`);
  }
  const retry: RetryPolicy = { ...DEFAULT_RETRY, ...config.retry };
  if (!Number.isInteger(retry.maxRetries) || retry.maxRetries < 0 ||
      retry.maxRetries > MAX_RETRIES_CAP) {
    throw new RangeError(
      `retry.maxRetries must be an integer in 0..${MAX_RETRIES_CAP}, ` +
      `got ${retry.maxRetries}`);
  }
  if (!(retry.baseDelayMs >= 0)) {
    throw new RangeError(
      `retry.baseDelayMs must be >= 0, got ${retry.baseDelayMs}`);
  }
  if (typeof config.baseUrl !== "string" || !/^https?:\/\//.test(config.baseUrl)) {
    throw new RangeError(`baseUrl must be an http(s) URL, got ${config.baseUrl}`);
  }
  return {
    baseUrl: config.baseUrl.replace(/\/+$/, ""),
    bearerToken: config.bearerToken ?? null,
    timeoutMs,
    retry,
  };
}
