/* tslint:disable */
/* eslint-disable */

/**
 * Gini estimates over `trials` labeling redraws of one dataset. The three
 * estimators share uniforms in every trial.
 */
export function estimator_spread(n: number, budget: number, tau: number, trials: number, seed: bigint): string;

/**
 * Sum of the Gini or Kendall kernel over all pairs of `n` random points,
 * by sorting (`naive = false`) or by enumeration.
 */
export function kernel_sum(kernel: string, n: number, seed: bigint, naive: boolean): number;

/**
 * Inclusion probabilities against the oracle score for `n` synthetic units.
 */
export function policy_curve(n: number, budget: number, tau: number, seed: bigint): string;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly estimator_spread: (a: number, b: number, c: number, d: number, e: bigint) => [number, number, number, number];
    readonly kernel_sum: (a: number, b: number, c: number, d: bigint, e: number) => [number, number, number];
    readonly policy_curve: (a: number, b: number, c: number, d: bigint) => [number, number, number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __externref_table_dealloc: (a: number) => void;
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
