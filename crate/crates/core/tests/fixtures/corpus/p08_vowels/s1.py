text = input()
vowels = 0
others = 0
for ch in text:
    if ch in "aeiou":
        vowels += 1
    elif ch.isalpha():
        others += 1
print(vowels, others)
