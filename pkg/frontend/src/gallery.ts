/**
 * Gallery paging: a fixed 24 thumbnails per page keeps byte requests
 * bounded no matter how large a confusion cell or result set gets.
 */

export const PAGE_SIZE = 24;

export function pageCount(total: number): number {
  return Math.max(1, Math.ceil(total / PAGE_SIZE));
}

export function clampPage(page: number, total: number): number {
  return Math.min(Math.max(page, 0), pageCount(total) - 1);
}

export function pageSlice<T>(items: T[], page: number): T[] {
  const p = clampPage(page, items.length);
  return items.slice(p * PAGE_SIZE, (p + 1) * PAGE_SIZE);
}
