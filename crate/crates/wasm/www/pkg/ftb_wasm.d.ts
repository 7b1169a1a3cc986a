/* tslint:disable */
/* eslint-disable */

/**
 * A 2-D hypergrid trainer that can be stepped from the page.
 */
export class GridDemo {
    free(): void;
    [Symbol.dispose](): void;
    /**
     * Terminal distribution of the current policy, row-major with the first
     * coordinate fastest.
     */
    distribution(): Float64Array;
    l1(): number;
    logZ(): number;
    modesFound(): number;
    constructor(divergence: string, h: number, epsilon: number, seed: bigint);
    side(): number;
    /**
     * Takes `steps` training steps and returns the last batch loss.
     */
    step(steps: number): number;
    stepsTaken(): number;
    target(): Float64Array;
}

export function devgradBatch(divergence: string, deltas: Float64Array): Float64Array;

export function lossCurve(divergence: string, lo: number, hi: number, n: number): Float64Array;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_griddemo_free: (a: number, b: number) => void;
    readonly devgradBatch: (a: number, b: number, c: number, d: number) => [number, number, number, number];
    readonly griddemo_distribution: (a: number) => [number, number];
    readonly griddemo_l1: (a: number) => number;
    readonly griddemo_logZ: (a: number) => number;
    readonly griddemo_modesFound: (a: number) => number;
    readonly griddemo_new: (a: number, b: number, c: number, d: number, e: bigint) => [number, number, number];
    readonly griddemo_side: (a: number) => number;
    readonly griddemo_step: (a: number, b: number) => [number, number, number];
    readonly griddemo_stepsTaken: (a: number) => number;
    readonly griddemo_target: (a: number) => [number, number];
    readonly lossCurve: (a: number, b: number, c: number, d: number, e: number) => [number, number, number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __wbindgen_malloc: (a: number, b: number) => number;
    readonly __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
    readonly __externref_table_dealloc: (a: number) => void;
    readonly __wbindgen_free: (a: number, b: number, c: number) => void;
    readonly __wbindgen_start: () => void;
}

export type SyncInitInput = BufferSource | WebAssembly.Module;

/**
 * Instantiates the given `module`, which can either be bytes or
 * a precompiled `WebAssembly.Module`.
 *
 * @param {{ module: SyncInitInput }} module - Passing `SyncInitInput` directly is deprecated.
 *
 * @returns {InitOutput}
 */
export function initSync(module: { module: SyncInitInput } | SyncInitInput): InitOutput;

/**
 * If `module_or_path` is {RequestInfo} or {URL}, makes a request and
 * for everything else, calls `WebAssembly.instantiate` directly.
 *
 * @param {{ module_or_path: InitInput | Promise<InitInput> }} module_or_path - Passing `InitInput` directly is deprecated.
 *
 * @returns {Promise<InitOutput>}
 */
export default function __wbg_init (module_or_path?: { module_or_path: InitInput | Promise<InitInput> } | InitInput | Promise<InitInput>): Promise<InitOutput>;
