/* tslint:disable */
/* eslint-disable */

/**
 * Locates a saddle from `guess` and classifies the limiting behaviour.
 */
export function certify_problem(problem_json: string, guess: Float64Array): string;

/**
 * Euler–Maruyama ensemble with isotropic noise of strength `sigma`;
 * returns the second-moment curve and, when enough paths ran, its fitted
 * growth slope over the second half of the horizon.
 */
export function noise_ensemble(problem_json: string, z0: Float64Array, sigma: number, t_end: number, dt: number, paths: number, seed: number): string;

/**
 * Integrates the gradient flow of the problem from `z0` over `[0, t_end]`
 * with `samples` uniform output points.
 */
export function simulate_flow(problem_json: string, z0: Float64Array, t_end: number, samples: number): string;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly certify_problem: (a: number, b: number, c: number, d: number) => [number, number];
    readonly noise_ensemble: (a: number, b: number, c: number, d: number, e: number, f: number, g: number, h: number, i: number) => [number, number];
    readonly simulate_flow: (a: number, b: number, c: number, d: number, e: number, f: number) => [number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __wbindgen_malloc: (a: number, b: number) => number;
    readonly __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
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
