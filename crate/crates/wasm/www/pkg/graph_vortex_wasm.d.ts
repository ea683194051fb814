/* tslint:disable */
/* eslint-disable */

/**
 * Maximal solution of the scalar equation on `C_n` with `m` vortices at vertex 0.
 */
export function abelian_ring(n: number, m: number, lambda: number): string;

/**
 * Bracket `[lo, hi]` around the critical coupling on `C_n` with `m` vortices at vertex 0.
 */
export function critical_ring(n: number, m: number): string;

/**
 * Non-Abelian system for a Cartan preset on `C_n`. `counts` lists the
 * vortex number of each component, comma separated; component `i` puts its
 * vortices at vertex `i·n/rank`.
 */
export function system_ring(preset: string, n: number, counts: string, lambda: number): string;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly abelian_ring: (a: number, b: number, c: number) => [number, number];
    readonly critical_ring: (a: number, b: number) => [number, number];
    readonly system_ring: (a: number, b: number, c: number, d: number, e: number, f: number) => [number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __wbindgen_free: (a: number, b: number, c: number) => void;
    readonly __wbindgen_malloc: (a: number, b: number) => number;
    readonly __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
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
