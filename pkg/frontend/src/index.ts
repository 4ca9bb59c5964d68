export { MemoryBaseClient } from "./client.js";
export {
  resolveConfig, DEFAULT_TIMEOUT_MS, DEFAULT_RETRY, MAX_RETRIES_CAP,
} from "./config.js";
export type { ClientConfig, RetryPolicy, ResolvedConfig } from "./config.js";
export {
  ClientError, ConnectionError, TimeoutError, ApiError,
} from "./errors.js";
export type { ViolationView } from "./errors.js";
export {
  schemaBody, appendMessageBody, nowBody,
  searchTarget, entityTarget, sessionMessagesTarget, sessionFlushTarget,
  SCHEMAS_TARGET, COMPRESS_TARGET, EXPIRE_TARGET, HEALTH_TARGET,
} from "./wire.js";
export type {
  InstallSchemaResponse, AppendResponse, FlushResponse, ScoredMemoryView,
  SearchResponse, EntityView, CompressResponse, ExpireResponse,
  HealthResponse, MessageInput, SearchOptions,
} from "./wire.js";
