/**
 * Confusion matrix grid model.
 *
 * The service reports only observed (true, pred) pairs; the grid fills
 * the gaps with empty cells so the table stays square. Cells with no
 * images render disabled, everything else is clickable and opens the
 * gallery on that cell's image list.
 */
import { ConfusionResponse } from './types.js';

export interface GridCell {
  trueLabel: number;
  predLabel: number;
  imageIds: number[];
  count: number;
  diagonal: boolean;
  clickable: boolean;
}

export interface ConfusionGrid {
  labels: number[];
  /** rows[i][j] is the cell for (labels[i] true, labels[j] predicted). */
  rows: GridCell[][];
  accuracy: number;
  images: number;
}

export function buildGrid(resp: ConfusionResponse): ConfusionGrid {
  const labels = [...new Set(resp.cells.flatMap((c) => [c.true_label, c.pred_label]))]
    .sort((a, b) => a - b);
  const byPair = new Map<string, number[]>();
  for (const cell of resp.cells) {
    byPair.set(`${cell.true_label}:${cell.pred_label}`, cell.image_ids);
  }
  const rows = labels.map((t) =>
    labels.map((p): GridCell => {
      const ids = byPair.get(`${t}:${p}`) ?? [];
      return {
        trueLabel: t,
        predLabel: p,
        imageIds: ids,
        count: ids.length,
        diagonal: t === p,
        clickable: ids.length > 0,
      };
    }),
  );
  return { labels, rows, accuracy: resp.accuracy, images: resp.images };
}

/** Byte routes the gallery requests for a clicked cell, in cell order. */
export function cellImageUrls(datasetId: string, cell: GridCell): string[] {
  return cell.imageIds.map((id) => `/datasets/${datasetId}/images/${id}`);
}
