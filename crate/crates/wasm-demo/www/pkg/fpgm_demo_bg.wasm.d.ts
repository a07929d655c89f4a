/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const gm_points: (a: number, b: number, c: number, d: number, e: number, f: number, g: number) => [number, number];
export const norm_density: (a: number, b: number, c: number) => [number, number];
export const resnet_flops: (a: number) => [number, number];
export const __wbindgen_externrefs: WebAssembly.Table;
export const __wbindgen_malloc: (a: number, b: number) => number;
export const __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __wbindgen_start: () => void;
