/** The 17-code schema grouped the way annotators learned it. */

export const CODE_GROUPS: ReadonlyArray<readonly [string, ReadonlyArray<string>]> = [
  [
    "MI-Consistent",
    [
      "Affirm",
      "EmphasizingAutonomy",
      "OpenQuestion",
      "ClosedQuestion",
      "Persuade",
      "Reflection",
      "SeekingCollaboration",
    ],
  ],
  ["MI-Inconsistent", ["Direct", "Inappropriate"]],
  [
    "Other",
    [
      "Grounding",
      "GivingInformation",
      "Support",
      "PersonalDisclosure",
      "Introduction",
      "Conclusion",
      "ChitChat",
      "Other",
    ],
  ],
];

export const ALL_CODES: ReadonlyArray<string> = CODE_GROUPS.flatMap(([, codes]) => [...codes]);

export function isKnownCode(code: string): boolean {
  return ALL_CODES.includes(code);
}
