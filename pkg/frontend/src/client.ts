/**
 * HTTP client for the broker API.
 *
 * Every call is independently signed; there are no session tokens, so a
 * client object is nothing but a server URL and a private key. Sessions
 * are safe for sequential use; run one assignment loop per client.
 */

import { canonJson } from "./canon.js";
import { identityOf, readKeyFile } from "./crypto.js";
import { nowNs, signEnvelope } from "./envelope.js";
import { AssignTimeoutError, ColonyError, errorFromCode } from "./errors.js";

export interface ClientOptions {
  /** Broker URL; defaults to COLONY_SERVER, then http://127.0.0.1:50080. */
  server?: string;
  /** Hex signing key; wins over keyfile. */
  privateKey?: string;
  /** Path to a key file; defaults to COLONY_KEYFILE. */
  keyfile?: string;
  /** Default per-call timeout in seconds. */
  timeoutS?: number;
}

export interface ProcessRecord {
  processid: string;
  state: "waiting" | "running" | "successful" | "failed";
  spec: Record<string, unknown>;
  input: unknown[];
  output: unknown[];
  errors: string[];
  retries: number;
  assignedexecutorid: string;
  workflowid: string;
  [key: string]: unknown;
}

export interface WorkflowSubmission {
  workflowid: string;
  processes: ProcessRecord[];
  [key: string]: unknown;
}

export interface FuncSpecOptions {
  colonyId: string;
  executorType: string;
  funcName: string;
  args?: unknown[];
  kwargs?: Record<string, unknown>;
  priority?: number;
  maxExecTime?: number;
  maxRetries?: number;
  maxWaitTime?: number;
  nodeName?: string;
  dependencies?: string[];
  executorNames?: string[];
}

/** Wire-shaped function spec with the broker's defaults filled in. */
export function createFuncSpec(opts: FuncSpecOptions): Record<string, unknown> {
  return {
    conditions: {
      colonyid: opts.colonyId,
      executortype: opts.executorType,
      executornames: opts.executorNames ?? [],
      dependencies: opts.dependencies ?? [],
    },
    funcname: opts.funcName,
    args: opts.args ?? [],
    kwargs: opts.kwargs ?? {},
    priority: opts.priority ?? 0,
    maxexectime: opts.maxExecTime ?? -1,
    maxretries: opts.maxRetries ?? 0,
    maxwaittime: opts.maxWaitTime ?? -1,
    nodename: opts.nodeName ?? "",
  };
}

export class ColonyClient {
  readonly server: string;
  private readonly privateKey: string;
  private readonly timeoutS: number;

  constructor(opts: ClientOptions = {}) {
    const server = opts.server ?? process.env.COLONY_SERVER ?? "http://127.0.0.1:50080";
    this.server = server.replace(/\/+$/, "");
    const keyfile = opts.keyfile ?? process.env.COLONY_KEYFILE;
    const key = opts.privateKey ?? (keyfile ? readKeyFile(keyfile) : undefined);
    if (!key) {
      throw new ColonyError("no signing key: pass privateKey or set COLONY_KEYFILE");
    }
    this.privateKey = key;
    this.timeoutS = opts.timeoutS ?? 30;
  }

  /** The client's signing key (hex). */
  prvkey(): string {
    return this.privateKey;
  }

  /** The identity this client's requests resolve to. */
  id(): string {
    return identityOf(this.privateKey);
  }

  /** Sign and post one call; 200 bodies come back as parsed JSON, anything
   * else is thrown as the matching structured error. */
  async call(
    payloadType: string,
    fields: Record<string, unknown>,
    timeoutS?: number,
  ): Promise<any> {
    const envelope = signEnvelope(payloadType, fields, this.privateKey, nowNs());
    const response = await fetch(this.server + "/api", {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: canonJson(envelope),
      signal: AbortSignal.timeout(((timeoutS ?? this.timeoutS) + 10) * 1000),
    });
    const body: any = await response.json().catch(() => ({}));
    if (response.status === 200) return body;
    const error = (body && typeof body === "object" ? body.error : undefined) ?? {};
    throw errorFromCode(
      error.code ?? "storage-failure",
      error.message ?? `HTTP ${response.status}`,
      response.status,
    );
  }

  // -- colonies / executors -------------------------------------------------

  async addColony(colonyId: string, name: string): Promise<Record<string, unknown>> {
    return this.call("add_colony", { colony: { colonyid: colonyId, name } });
  }

  async addExecutor(
    executorId: string,
    name: string,
    executorType: string,
    colonyId: string,
  ): Promise<Record<string, unknown>> {
    return this.call("add_executor", {
      executor: {
        executorid: executorId,
        executorname: name,
        executortype: executorType,
        colonyid: colonyId,
      },
    });
  }

  async approveExecutor(colonyId: string, executorName: string): Promise<void> {
    await this.call("approve_executor", { colonyid: colonyId, executorname: executorName });
  }

  async addFunction(colonyId: string, executorName: string, funcName: string): Promise<void> {
    await this.call("add_function", {
      colonyid: colonyId,
      executorname: executorName,
      funcname: funcName,
    });
  }

  // -- processes --------------------------------------------------------------

  async submit(spec: Record<string, unknown>): Promise<ProcessRecord> {
    return this.call("submit_funcspec", { spec });
  }

  async submitWorkflow(
    colonyId: string,
    nodes: Array<Record<string, unknown>>,
  ): Promise<WorkflowSubmission> {
    return this.call("submit_workflow", { colonyid: colonyId, workflow: nodes });
  }

  async getWorkflow(colonyId: string, workflowId: string): Promise<Record<string, unknown>> {
    return this.call("get_workflow", { colonyid: colonyId, workflowid: workflowId });
  }

  /** Long-poll for work; throws AssignTimeoutError when the window closes
   * with nothing to run, so executor loops can catch and poll again. */
  async assign(colonyId: string, timeoutS: number): Promise<ProcessRecord> {
    const body = await this.call("assign", { colonyid: colonyId, timeout: timeoutS }, timeoutS);
    if (body.process === null || body.process === undefined) {
      throw new AssignTimeoutError(`no assignment within ${timeoutS}s`);
    }
    return body.process;
  }

  async close(
    processId: string,
    successful: boolean,
    output?: unknown[],
    errors?: string[],
  ): Promise<ProcessRecord> {
    const fields: Record<string, unknown> = { processid: processId, successful };
    if (output !== undefined) fields.output = output;
    if (errors !== undefined) fields.errors = errors;
    return this.call("close", fields);
  }

  async getProcess(processId: string): Promise<ProcessRecord> {
    return this.call("get_process", { processid: processId });
  }

  /** Long-poll until the process reaches a terminal state. */
  async subscribe(processId: string, timeoutS: number): Promise<ProcessRecord> {
    return this.call("subscribe", { processid: processId, timeout: timeoutS }, timeoutS);
  }

  // -- generators -------------------------------------------------------------

  async addGenerator(
    colonyId: string,
    name: string,
    nodes: Array<Record<string, unknown>>,
    triggerCount: number,
    timeout = 0,
  ): Promise<Record<string, unknown>> {
    return this.call("add_generator", {
      generator: {
        colonyid: colonyId,
        name,
        triggercount: triggerCount,
        timeout,
        workflow: nodes,
      },
    });
  }

  /** Queue one payload for a generator; a workflow fires once the
   * generator's trigger count is reached. */
  async pack(colonyId: string, generatorId: string, payload: unknown): Promise<Record<string, unknown>> {
    return this.call("pack", { colonyid: colonyId, generatorid: generatorId, payload });
  }

  async health(): Promise<Record<string, unknown>> {
    const response = await fetch(this.server + "/health", {
      signal: AbortSignal.timeout(5000),
    });
    return (await response.json()) as Record<string, unknown>;
  }
}
