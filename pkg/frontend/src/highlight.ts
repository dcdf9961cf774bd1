// Minimal Lean 4 token colouring. The fragment's textContent is always
// byte-identical to the input: spans only wrap, never rewrite.

const KEYWORDS = new Set([
  "theorem", "lemma", "example", "def", "abbrev", "structure", "class",
  "instance", "import", "open", "namespace", "end", "section", "variable",
  "by", "calc", "have", "show", "fun", "let", "match", "with", "do",
  "then", "else", "if", "where", "deriving",
]);

const TOKEN = /--[^\n]*|\/-[\s\S]*?-\/|"(?:[^"\\]|\\.)*"|[A-Za-z_][A-Za-z0-9_'.]*|\s+|./g;

export function highlightLean(code: string): DocumentFragment {
  const fragment = document.createDocumentFragment();
  for (const match of code.matchAll(TOKEN)) {
    const token = match[0];
    let cls = "";
    if (token.startsWith("--") || token.startsWith("/-")) cls = "tok-comment";
    else if (token.startsWith('"')) cls = "tok-string";
    else if (KEYWORDS.has(token)) cls = "tok-keyword";
    if (cls) {
      const span = document.createElement("span");
      span.className = cls;
      span.textContent = token;
      fragment.appendChild(span);
    } else {
      fragment.appendChild(document.createTextNode(token));
    }
  }
  return fragment;
}
