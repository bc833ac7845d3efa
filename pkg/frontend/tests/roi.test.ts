import { describe, expect, it } from 'vitest';
import { dragToRect, unscaleRect } from '../src/roi.js';

describe('drag to rectangle', () => {
  it('turns a forward drag into a half-open rect', () => {
    expect(dragToRect({ x: 50, y: 50 }, { x: 200, y: 200 }, 256, 256)).toEqual({
      r0: 50,
      c0: 50,
      r1: 200,
      c1: 200,
    });
  });

  it('maps y to rows and x to columns', () => {
    expect(dragToRect({ x: 10, y: 20 }, { x: 30, y: 60 }, 256, 256)).toEqual({
      r0: 20,
      c0: 10,
      r1: 60,
      c1: 30,
    });
  });

  it('normalizes a reversed drag', () => {
    expect(dragToRect({ x: 30, y: 60 }, { x: 10, y: 20 }, 256, 256)).toEqual({
      r0: 20,
      c0: 10,
      r1: 60,
      c1: 30,
    });
  });

  it('clamps points outside the image', () => {
    expect(dragToRect({ x: -10, y: -10 }, { x: 300, y: 300 }, 256, 256)).toEqual({
      r0: 0,
      c0: 0,
      r1: 256,
      c1: 256,
    });
  });

  it('rejects a selection with no area', () => {
    expect(dragToRect({ x: 5, y: 5 }, { x: 5, y: 80 }, 256, 256)).toBeNull();
    expect(dragToRect({ x: 5, y: 5 }, { x: 80, y: 5 }, 256, 256)).toBeNull();
    expect(dragToRect({ x: 10, y: 10 }, { x: 10.4, y: 40 }, 256, 256)).toBeNull();
  });

  it('rounds sub-pixel points', () => {
    expect(dragToRect({ x: 49.6, y: 49.6 }, { x: 200.4, y: 199.5 }, 256, 256)).toEqual({
      r0: 50,
      c0: 50,
      r1: 200,
      c1: 200,
    });
  });
});

describe('display scaling', () => {
  it('undoes the canvas scale factor', () => {
    expect(unscaleRect({ r0: 100, c0: 100, r1: 400, c1: 400 }, 2, 2)).toEqual({
      r0: 50,
      c0: 50,
      r1: 200,
      c1: 200,
    });
  });
});
