/**
 * Keyboard shortcuts. Pure key-to-action mapping; the controller decides
 * whether the action is currently legal.
 *
 *   Enter        accept the current selection as the antecedent
 *   n            no previous mention
 *   x            not an entity
 *   Tab / c      cycle forward through suggested candidates
 *   Shift+Tab    cycle backward
 *   Escape       clear the selection
 */

export type Action =
  | { type: "accept" }
  | { type: "no_prior" }
  | { type: "not_mention" }
  | { type: "cycle"; direction: 1 | -1 }
  | { type: "clear" };

export interface KeyStroke {
  key: string;
  shiftKey?: boolean;
  ctrlKey?: boolean;
  metaKey?: boolean;
  altKey?: boolean;
}

export function actionForKey(stroke: KeyStroke): Action | null {
  if (stroke.ctrlKey || stroke.metaKey || stroke.altKey) return null;
  switch (stroke.key) {
    case "Enter":
      return { type: "accept" };
    case "n":
    case "N":
      return { type: "no_prior" };
    case "x":
    case "X":
      return { type: "not_mention" };
    case "Tab":
      return { type: "cycle", direction: stroke.shiftKey ? -1 : 1 };
    case "c":
    case "C":
      return { type: "cycle", direction: stroke.shiftKey ? -1 : 1 };
    case "Escape":
      return { type: "clear" };
    default:
      return null;
  }
}
