/** Everything this client throws derives from one error class. */

/** A violation entry inside a problem-detail body. */
export interface ViolationView {
  path: string;
  message: string;
  severity: string;
}

/** Base class for every error raised by the client. */
export class ClientError extends Error {
  constructor(message: string, options?: { cause?: unknown }) {
    super(message, options);
    this.name = new.target.name;
  }
}

/** The server could not be reached (refused, reset, DNS failure). */
export class ConnectionError extends ClientError {}

/** The request did not complete within the configured timeout. */
export class TimeoutError extends ClientError {}

/**
 * The server answered with an error status. The problem-detail body
 * (code, message, path, violations) is carried through unchanged.
 */
export class ApiError extends ClientError {
  readonly status: number;
  readonly code: string;
  readonly path: string | null;
  readonly violations: ViolationView[];
  /** Raw response text, for bodies that were not problem details. */
  readonly body: string;

  constructor(status: number, body: string) {
    let code = `http_${status}`;
    let message = body || `request failed with status ${status}`;
    let path: string | null = null;
    let violations: ViolationView[] = [];
    try {
      const detail = JSON.parse(body);
      if (detail && typeof detail === "object") {
        if (typeof detail.code === "string") code = detail.code;
        if (typeof detail.message === "string") message = detail.message;
        if (typeof detail.path === "string") path = detail.path;
        if (Array.isArray(detail.violations)) violations = detail.violations;
      }
    } catch {
      // non-JSON error body: keep the raw text as the message
    }
    super(`${status} ${code}: ${message}`);
    this.status = status;
    this.code = code;
    this.path = path;
    this.violations = violations;
    this.body = body;
  }
}
