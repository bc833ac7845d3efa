/**
 * View state for the single-page UI.
 *
 * The query text is always re-derivable: in form mode it is a pure
 * function of the form fields, and editing the text directly parks the
 * form and switches to raw mode until the next form change. Updates
 * return fresh objects so renders can compare by reference.
 */
import { QueryForm, buildSql, defaultForm } from './sqlgen.js';

export interface SelectedCell {
  trueLabel: number;
  predLabel: number;
}

export interface ViewState {
  datasetId: string | null;
  modelId: number | null;
  cell: SelectedCell | null;
  form: QueryForm;
  /** Non-null while the user owns the SQL text. */
  rawSql: string | null;
  sessionId: string | null;
  galleryPage: number;
}

export function initialState(): ViewState {
  return {
    datasetId: null,
    modelId: null,
    cell: null,
    form: defaultForm(),
    rawSql: null,
    sessionId: null,
    galleryPage: 0,
  };
}

/** The SQL the run button submits. */
export function currentSql(state: ViewState): string {
  return state.rawSql ?? buildSql(state.form);
}

export function inRawMode(state: ViewState): boolean {
  return state.rawSql !== null;
}

/** Direct edits take ownership of the text. */
export function editSql(state: ViewState, text: string): ViewState {
  return { ...state, rawSql: text };
}

/** Any form change regenerates the SQL and leaves raw mode. */
export function patchForm(state: ViewState, patch: Partial<QueryForm>): ViewState {
  return { ...state, form: { ...state.form, ...patch }, rawSql: null };
}

export function selectDataset(state: ViewState, datasetId: string): ViewState {
  return {
    ...state,
    datasetId,
    modelId: null,
    cell: null,
    sessionId: null,
    galleryPage: 0,
  };
}

export function selectCell(state: ViewState, cell: SelectedCell): ViewState {
  return { ...state, cell, galleryPage: 0 };
}

export function recordSession(state: ViewState, sessionId: string): ViewState {
  return { ...state, sessionId };
}
