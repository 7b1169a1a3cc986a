/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const __wbg_griddemo_free: (a: number, b: number) => void;
export const devgradBatch: (a: number, b: number, c: number, d: number) => [number, number, number, number];
export const griddemo_distribution: (a: number) => [number, number];
export const griddemo_l1: (a: number) => number;
export const griddemo_logZ: (a: number) => number;
export const griddemo_modesFound: (a: number) => number;
export const griddemo_new: (a: number, b: number, c: number, d: number, e: bigint) => [number, number, number];
export const griddemo_side: (a: number) => number;
export const griddemo_step: (a: number, b: number) => [number, number, number];
export const griddemo_stepsTaken: (a: number) => number;
export const griddemo_target: (a: number) => [number, number];
export const lossCurve: (a: number, b: number, c: number, d: number, e: number) => [number, number, number, number];
export const __wbindgen_externrefs: WebAssembly.Table;
export const __wbindgen_malloc: (a: number, b: number) => number;
export const __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __wbindgen_start: () => void;
