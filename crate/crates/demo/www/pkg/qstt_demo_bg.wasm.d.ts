/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const attackResponse: (a: number, b: number, c: number) => [number, number, number, number];
export const averagingCurve: (a: number) => [number, number, number, number];
export const interceptQber: (a: number, b: number) => [number, number, number, number];
export const __wbindgen_externrefs: WebAssembly.Table;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __wbindgen_start: () => void;
